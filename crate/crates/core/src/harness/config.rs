use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::effective::FiberedGridOptions;
use crate::expr;
use crate::hypersurface::{AmbientGridOptions, Orientation};
use crate::model::{longitudinal_vars, validate_model, ModelError, ModelSpec, RawModel};

pub const SCHEMA_VERSION: u32 = 1;

/// A run description: one model, an optional hypersurface well, and a list
/// of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: Option<RawModel>,
    pub surface: Option<SurfaceSection>,
    #[serde(default)]
    pub experiment: Vec<Experiment>,
}

fn default_seed() -> u64 {
    0x5eed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    /// Ambient potential in `x, y`.
    pub v: String,
    pub m: usize,
    /// Parametrization of the zero curve in `theta`.
    pub curve_x: String,
    pub curve_y: String,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default = "default_curve_samples")]
    pub samples: usize,
}

fn default_curve_samples() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Experiment {
    Low(LowExperiment),
    Middle(MiddleExperiment),
    Surface(SurfaceExperiment),
    Transverse(TransverseExperiment),
}

impl Experiment {
    pub fn name(&self) -> &str {
        match self {
            Experiment::Low(e) => &e.name,
            Experiment::Middle(e) => &e.name,
            Experiment::Surface(e) => &e.name,
            Experiment::Transverse(e) => &e.name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Low(_) => "low",
            Experiment::Middle(_) => "middle",
            Experiment::Surface(_) => "surface",
            Experiment::Transverse(_) => "transverse",
        }
    }
}

fn default_j() -> usize {
    1
}

fn default_k() -> Vec<usize> {
    vec![1]
}

fn default_slack() -> f64 {
    0.2
}

fn default_ratio() -> f64 {
    10.0
}

fn default_gate() -> f64 {
    1.0
}

/// Sweep in `hbar` below the essential spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowExperiment {
    pub name: String,
    pub hbar: Vec<f64>,
    #[serde(default = "default_j")]
    pub j: usize,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    /// A fitted slope passes when it is at least the claimed exponent minus this.
    #[serde(default = "default_slack")]
    pub slope_slack: f64,
    #[serde(default)]
    pub grid: FiberedGridOptions,
}

/// Fixed `hbar`, several transverse bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiddleExperiment {
    pub name: String,
    pub hbar: f64,
    pub j: Vec<usize>,
    /// Allowed max/min spread of `|error| / (mu_j hbar^2)` across bands.
    #[serde(default = "default_ratio")]
    pub max_ratio: f64,
    #[serde(default = "middle_grid")]
    pub grid: FiberedGridOptions,
}

fn middle_grid() -> FiberedGridOptions {
    FiberedGridOptions { ppw_x: 6.0, ppw_y: 6.0, ..Default::default() }
}

/// Sweep in `h` for the hypersurface well of the `[surface]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceExperiment {
    pub name: String,
    pub h: Vec<f64>,
    #[serde(default = "default_j")]
    pub j_max: usize,
    #[serde(default)]
    pub alpha_max: usize,
    #[serde(default = "default_gate")]
    pub gate_factor: f64,
    /// Allowed max/min spread of `|error| / (h^2 mu_j^(2+3/(2m)))`.
    #[serde(default = "default_ratio")]
    pub max_ratio: f64,
    #[serde(default)]
    pub grid: AmbientGridOptions,
}

/// Levels of `D^2 + g` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransverseExperiment {
    pub name: String,
    pub g: String,
    pub a: f64,
    pub j_max: usize,
    #[serde(default = "default_transverse_tol")]
    pub tol: f64,
    /// Exact levels to compare with, if known.
    pub expect: Option<Vec<f64>>,
    /// Allowed `|computed - expected|`.
    #[serde(default = "default_expect_tol")]
    pub expect_tol: f64,
}

fn default_transverse_tol() -> f64 {
    1e-10
}

fn default_expect_tol() -> f64 {
    1e-8
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> HarnessError {
    HarnessError::Config { path: path.into(), message: message.into() }
}

/// Parses TOML text, reporting the failing key path.
pub fn parse_config(text: &str) -> Result<Config, HarnessError> {
    let de = toml::Deserializer::new(text);
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        config_error(path, inner.message().to_string())
    })?;
    Ok(cfg)
}

fn model_field(err: &ModelError, raw: &RawModel) -> &'static str {
    match err {
        ModelError::Dimension(_) => "model.n",
        ModelError::InvalidDegree(_) => "model.a",
        ModelError::NonHomogeneous { .. } => "model.g",
        ModelError::MinimumNotAtOrigin(_) | ModelError::DegenerateHessian(_) => "model.f",
        ModelError::NonPositive { which: "g", .. } => "model.g",
        ModelError::NonPositive { .. } => "model.f",
        ModelError::InvalidFInfinity(_) => "model.f_infinity",
        ModelError::InvalidSampling => "model.validation_box",
        ModelError::Expr(_) => {
            if expr::parse(&raw.f, &longitudinal_vars(raw.n)).is_err() {
                "model.f"
            } else {
                "model.g"
            }
        }
    }
}

/// A parsed config whose model and experiment parameters are consistent.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: Config,
    pub model: Option<ModelSpec>,
}

fn check_positive(path: String, values: &[f64]) -> Result<(), HarnessError> {
    if values.is_empty() {
        return Err(config_error(path, "must not be empty"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(config_error(path, format!("values must be positive and finite, got {v}")));
    }
    Ok(())
}

pub fn validate_config(config: Config) -> Result<ValidatedConfig, HarnessError> {
    if config.schema_version != SCHEMA_VERSION {
        return Err(config_error(
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", config.schema_version),
        ));
    }
    let model = match &config.model {
        Some(raw) => Some(validate_model(raw).map_err(|e| config_error(model_field(&e, raw), e.to_string()))?),
        None => None,
    };
    if let Some(s) = &config.surface {
        if s.m == 0 {
            return Err(config_error("surface.m", "must be at least 1"));
        }
        expr::parse(&s.v, &["x", "y"]).map_err(|e| config_error("surface.v", e.to_string()))?;
        expr::parse(&s.curve_x, &["theta"]).map_err(|e| config_error("surface.curve_x", e.to_string()))?;
        expr::parse(&s.curve_y, &["theta"]).map_err(|e| config_error("surface.curve_y", e.to_string()))?;
    }
    let mut names = std::collections::BTreeSet::new();
    for (i, e) in config.experiment.iter().enumerate() {
        let at = |field: &str| format!("experiment[{i}].{field}");
        if e.name().is_empty() || !e.name().chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(config_error(at("name"), "use letters, digits, '_' or '-'"));
        }
        if !names.insert(e.name().to_string()) {
            return Err(config_error(at("name"), format!("duplicate experiment name {}", e.name())));
        }
        match e {
            Experiment::Low(x) => {
                if model.is_none() {
                    return Err(config_error("model", "low experiments need a [model] section"));
                }
                check_positive(at("hbar"), &x.hbar)?;
                if x.j == 0 {
                    return Err(config_error(at("j"), "indices start at 1"));
                }
                if x.k.is_empty() || x.k.contains(&0) {
                    return Err(config_error(at("k"), "needs indices starting at 1"));
                }
            }
            Experiment::Middle(x) => {
                if model.is_none() {
                    return Err(config_error("model", "middle experiments need a [model] section"));
                }
                check_positive(at("hbar"), &[x.hbar])?;
                if x.j.is_empty() || x.j.contains(&0) {
                    return Err(config_error(at("j"), "needs indices starting at 1"));
                }
            }
            Experiment::Surface(x) => {
                if config.surface.is_none() {
                    return Err(config_error("surface", "surface experiments need a [surface] section"));
                }
                check_positive(at("h"), &x.h)?;
                if x.j_max == 0 {
                    return Err(config_error(at("j_max"), "must be at least 1"));
                }
            }
            Experiment::Transverse(x) => {
                expr::parse(&x.g, &["y"]).map_err(|err| config_error(at("g"), err.to_string()))?;
                if !(x.a > 0.0) {
                    return Err(config_error(at("a"), format!("must be positive, got {}", x.a)));
                }
                if x.j_max == 0 {
                    return Err(config_error(at("j_max"), "must be at least 1"));
                }
                if let Some(v) = &x.expect {
                    if v.len() > x.j_max {
                        return Err(config_error(at("expect"), "more values than j_max"));
                    }
                }
            }
        }
    }
    Ok(ValidatedConfig { config, model })
}
