//! Configuration, sweeps, slope fits, caching and report files.

mod config;
mod fit;
mod report;
mod run;
mod store;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    parse_config, validate_config, Config, Experiment, LowExperiment, MiddleExperiment, SurfaceExperiment,
    SurfaceSection, TransverseExperiment, ValidatedConfig, SCHEMA_VERSION,
};
pub use fit::{fit_signed, fit_slope, least_squares, FitError, SlopeFit, WindowedFit};
pub use report::{
    emit, plot_script, read_csv, write_csv, Check, ExperimentReport, Provenance, Row, SeriesFit, SurfaceExtra,
    SweepReport, CSV_HEADER,
};
pub use store::{CacheStats, DiskCache};

use crate::cache::ResultCache;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Process exit status for a finished run.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads; all available cores when `None`.
    pub jobs: Option<usize>,
    /// Cache directory, or `None` to disable caching.
    pub cache_dir: Option<PathBuf>,
}

/// Reads, parses and validates a config file; also returns its SHA-256.
pub fn load_config(path: &Path) -> Result<(ValidatedConfig, String), HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| HarnessError::Config { path: String::new(), message: "file is not UTF-8".into() })?;
    let cfg = validate_config(parse_config(&text)?)?;
    Ok((cfg, hex::encode(Sha256::digest(&bytes))))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs every experiment of the config and writes the report files.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<SweepReport, HarnessError> {
    let (cfg, sha) = load_config(config_path)?;
    let started_unix = unix_now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let disk = opts.cache_dir.as_ref().map(DiskCache::new);
    let cache: Option<&dyn ResultCache> = disk.as_ref().map(|d| d as &dyn ResultCache);
    let experiments = pool.install(|| {
        cfg.config
            .experiment
            .iter()
            .map(|e| run::run_experiment(e, cfg.model.as_ref(), cfg.config.surface.as_ref(), cfg.config.seed, cache))
            .collect()
    });
    let report = SweepReport {
        provenance: Provenance {
            config_path: config_path.display().to_string(),
            config_sha256: sha,
            seed: cfg.config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            finished_unix: unix_now(),
            cache: opts.cache_dir.as_ref().map(|p| p.display().to_string()),
        },
        experiments,
    };
    emit(&report, &opts.out)?;
    Ok(report)
}

/// 0 when every verdict passes, 3 if any experiment hit a computation
/// error, 1 otherwise.
pub fn exit_code(report: &SweepReport) -> i32 {
    if report.has_errors() {
        EXIT_COMPUTE
    } else if report.verdict() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}
