use std::path::Path;

use fiberspec::harness::{exit_code, read_csv, run, DiskCache, RunOptions, SweepReport, CSV_HEADER, EXIT_PASS};
use sha2::{Digest, Sha256};

const CONFIG: &str = r#"
schema_version = 1
seed = 11

[model]
n = 1
a = 2.0
f = "1 + x^2"
g = "y^2"
f_infinity = inf

[[experiment]]
kind = "transverse"
name = "harmonic"
g = "y^2"
a = 2.0
j_max = 3
expect = [1.0, 3.0, 5.0]

[[experiment]]
kind = "low"
name = "single"
hbar = [0.2]
k = [1, 2]
"#;

fn run_into(cfg: &Path, out: &Path, cache: Option<&Path>) -> SweepReport {
    run(cfg, &RunOptions { out: out.to_path_buf(), jobs: Some(1), cache_dir: cache.map(Path::to_path_buf) }).unwrap()
}

#[test]
fn small_sweep_reports_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cache = dir.path().join("cache");

    let first = run_into(&cfg, &dir.path().join("a"), Some(&cache));
    assert_eq!(exit_code(&first), EXIT_PASS, "{first:#?}");
    let sha = hex::encode(Sha256::digest(CONFIG.as_bytes()));
    assert_eq!(first.provenance.config_sha256, sha);
    assert_eq!(first.provenance.seed, 11);

    let text = std::fs::read_to_string(dir.path().join("a/single.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let rows = read_csv(&dir.path().join("a/single.csv")).unwrap();
    assert_eq!(rows, first.experiments[1].rows);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r.error.abs() < 0.05 && r.disc_budget < 1e-6, "{r:?}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(json["provenance"]["config_sha256"], sha.as_str());

    let entries = DiskCache::new(&cache).stats().unwrap().entries;
    assert!(entries > 0);
    let second = run_into(&cfg, &dir.path().join("b"), Some(&cache));
    assert_eq!(DiskCache::new(&cache).stats().unwrap().entries, entries);
    assert!(second.experiments[1].solve_seconds < first.experiments[1].solve_seconds);
    for name in ["harmonic.csv", "single.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between cold and warm cache");
    }
}
