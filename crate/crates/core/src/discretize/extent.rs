use serde::{Deserialize, Serialize};

use super::DiscretizeError;
use crate::effective::harmonic_levels;
use crate::expr::PotentialExpr;
use crate::model::{ModelSpec, SemiclassicalParams};

/// Eigenfunction amplitude at the wall targeted by the truncation rule.
pub const WALL_AMPLITUDE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtentLimits {
    pub min: f64,
    pub max: f64,
}

impl Default for ExtentLimits {
    fn default() -> Self {
        Self { min: 2.0, max: 40.0 }
    }
}

const AGMON_STEP: f64 = 2e-3;

/// Distance `r` along a ray at which `∫_0^r sqrt(max(F(s) - level, 0)) ds`
/// first reaches `target`, or `None` if that does not happen before `cap`.
pub fn agmon_reach(
    mut potential: impl FnMut(f64) -> Result<f64, DiscretizeError>,
    level: f64,
    target: f64,
    cap: f64,
) -> Result<Option<f64>, DiscretizeError> {
    let root = |v: f64| (v - level).max(0.0).sqrt();
    let mut s = 0.0;
    let mut acc = 0.0;
    let mut prev = root(potential(0.0)?);
    while s < cap {
        let next_s = (s + AGMON_STEP).min(cap);
        let cur = root(potential(next_s)?);
        acc += 0.5 * (prev + cur) * (next_s - s);
        s = next_s;
        prev = cur;
        if acc >= target {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

fn clamp(axis: usize, required: Option<f64>, limits: ExtentLimits) -> Result<f64, DiscretizeError> {
    match required {
        Some(r) if r <= limits.max => Ok(r.max(limits.min)),
        Some(r) => Err(DiscretizeError::ExtentOverflow { axis, required: r, cap: limits.max }),
        None => Err(DiscretizeError::ExtentOverflow { axis, required: f64::INFINITY, cap: limits.max }),
    }
}

/// Half-extent for the transverse axis of `D^2 + g` when levels up to `mu_max`
/// matter: the larger of the first `y` with `g(y) > 4 mu_max` and the Agmon
/// reach at level `mu_max`.
pub fn transverse_extent(g: &PotentialExpr, mu_max: f64, limits: ExtentLimits) -> Result<f64, DiscretizeError> {
    let target = -WALL_AMPLITUDE.ln();
    let mut need: f64 = 0.0;
    for sign in [1.0, -1.0] {
        let pot = |t: f64| Ok(g.eval1(sign * t)?);
        let reach = agmon_reach(pot, mu_max, target, 2.0 * limits.max)?;
        let Some(reach) = reach else {
            return clamp(0, None, limits);
        };
        let mut t = 0.0;
        while g.eval1(sign * t)? <= 4.0 * mu_max {
            t += AGMON_STEP;
            if t > 2.0 * limits.max {
                return clamp(0, None, limits);
            }
        }
        need = need.max(reach).max(t);
    }
    clamp(0, Some(need), limits)
}

/// Per-axis half-extents for the fibered operator: `n` longitudinal axes
/// followed by the transverse axis. `mus` are the transverse levels in play
/// and `k_max` the number of longitudinal levels per band.
pub fn choose_extent(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    mus: &[f64],
    k_max: usize,
    limits: ExtentLimits,
) -> Result<Vec<f64>, DiscretizeError> {
    assert!(!mus.is_empty() && k_max >= 1);
    let target = -WALL_AMPLITUDE.ln();
    let e = harmonic_levels(&model.hess_f0, 1.0, model.a, k_max).expect("validated Hessian is positive definite");
    let exponent = 2.0 / (2.0 + model.a);
    let mut out = Vec::with_capacity(model.n + 1);
    for axis in 0..model.n {
        let mut need: f64 = 0.0;
        for &mu in mus {
            let hbar_j = params.hbar / mu.sqrt();
            let level = 1.0 + hbar_j * e[k_max - 1];
            for sign in [1.0, -1.0] {
                let pot = |t: f64| {
                    let mut x = vec![0.0; model.n];
                    x[axis] = sign * t;
                    Ok(model.f_at(&x)?.powf(exponent))
                };
                match agmon_reach(pot, level, target * hbar_j, 2.0 * limits.max)? {
                    Some(r) => need = need.max(r),
                    None => return clamp(axis, None, limits).map(|_| Vec::new()),
                }
            }
        }
        out.push(clamp(axis, Some(need), limits)?);
    }
    let mu_max = mus.iter().cloned().fold(f64::MIN, f64::max);
    let y = transverse_extent(&model.g, mu_max, limits)
        .map_err(|e| match e {
            DiscretizeError::ExtentOverflow { required, cap, .. } => {
                DiscretizeError::ExtentOverflow { axis: model.n, required, cap }
            }
            other => other,
        })?;
    out.push(y);
    Ok(out)
}
