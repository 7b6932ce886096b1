use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Experiment, LowExperiment, MiddleExperiment, SurfaceExperiment, SurfaceSection, TransverseExperiment};
use super::fit::fit_signed;
use super::report::{Check, ExperimentReport, Row, SeriesFit, SurfaceExtra};
use crate::cache::{memoize, ResultCache};
use crate::effective::{predict_low, predict_middle, solve_band_by_overlap, solve_low_band, EffectiveError};
use crate::expr;
use crate::hypersurface::{build_gamma, surface_well, verify_surface};
use crate::model::{h_of_hbar, ModelSpec};
use crate::transverse::{transverse_spectrum, TransverseOptions, TransverseSpectrum};

type Outcome = (Vec<Row>, Vec<SeriesFit>, Vec<Check>);

pub(crate) fn cached_spectrum(
    g: &expr::PotentialExpr,
    a: f64,
    j_max: usize,
    opts: &TransverseOptions,
    cache: Option<&dyn ResultCache>,
) -> Result<TransverseSpectrum, String> {
    #[derive(Serialize)]
    struct Key<'a> {
        kind: &'a str,
        g: String,
        a: f64,
        j_max: usize,
        opts: &'a TransverseOptions,
    }
    let key = Key { kind: "transverse", g: g.to_string(), a, j_max, opts };
    memoize(cache, &key, || transverse_spectrum(g, a, j_max, opts)).map_err(|e| e.to_string())
}

fn model_spectrum(model: &ModelSpec, j_max: usize, seed: u64, cache: Option<&dyn ResultCache>) -> Result<TransverseSpectrum, String> {
    let opts = TransverseOptions { seed, ..Default::default() };
    cached_spectrum(&model.g, model.a, j_max, &opts, cache)
}

fn series_fits(rows: &[Row], claimed: impl Fn(&Row) -> f64, slack: f64, use_h: bool) -> Vec<SeriesFit> {
    let mut keys: Vec<(String, usize, usize)> = Vec::new();
    for r in rows {
        let k = (r.regime.clone(), r.j, r.k_or_alpha);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(regime, j, k)| {
            let series: Vec<&Row> = rows.iter().filter(|r| r.regime == regime && r.j == j && r.k_or_alpha == k).collect();
            let c = claimed(series[0]);
            let pts: Vec<(f64, f64, f64)> =
                series.iter().map(|r| (if use_h { r.h } else { r.hbar }, r.error, r.disc_budget)).collect();
            let result = fit_signed(&pts).map_err(|e| e.to_string());
            let pass = result.as_ref().is_ok_and(|w| w.fit.slope >= c - slack);
            SeriesFit { regime, j, k_or_alpha: k, claimed: c, threshold: c - slack, result, pass }
        })
        .collect()
}

fn spread_check(name: &str, ratios: &[f64], max_ratio: f64, informational: bool) -> Check {
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    Check {
        name: name.to_string(),
        pass: lo > 0.0 && spread <= max_ratio,
        detail: format!("ratios {ratios:?}; max/min = {spread:.4} (limit {max_ratio})"),
        informational,
    }
}

fn sort_rows(rows: &mut [Row]) {
    rows.sort_by(|a, b| b.h.total_cmp(&a.h));
}

pub(crate) fn run_low(
    model: &ModelSpec,
    x: &LowExperiment,
    seed: u64,
    cache: Option<&dyn ResultCache>,
) -> Result<Outcome, String> {
    let spec = model_spectrum(model, x.j + 1, seed, cache)?;
    let grid = crate::effective::FiberedGridOptions { seed, ..x.grid };
    let k_max = *x.k.iter().max().expect("validated non-empty");
    if x.j > 1 && k_max > 1 {
        return Err(EffectiveError::ClusterAmbiguity(format!(
            "band {} is selected by overlap, which identifies level k = 1 only",
            x.j
        ))
        .to_string());
    }
    let smallest = x.hbar.iter().cloned().fold(f64::INFINITY, f64::min);
    let per_hbar: Vec<Result<(Vec<Row>, Vec<Check>), String>> = x
        .hbar
        .par_iter()
        .map(|&hbar| {
            let p = h_of_hbar(hbar, model.a);
            let mut rows = Vec::new();
            let mut checks = Vec::new();
            let (full, reduced): (Vec<_>, Vec<_>) = if x.j == 1 {
                let s = solve_low_band(model, &p, &spec, k_max, &grid, cache).map_err(|e| e.to_string())?;
                for k in 1..=k_max {
                    let (f, r) = (s.full[k - 1], s.reduced[k - 1]);
                    checks.push(Check {
                        name: format!("lower bound hbar={hbar} k={k}"),
                        pass: f.value >= r.value - (f.budget + r.budget),
                        detail: format!("full {} vs reduced {} (budget {:e})", f.value, r.value, f.budget + r.budget),
                        informational: false,
                    });
                }
                if k_max >= 2 && hbar == smallest {
                    let cut = 0.5 * (s.reduced[k_max - 2].value + s.reduced[k_max - 1].value);
                    let count = s.full.iter().filter(|e| e.value < cut).count();
                    checks.push(Check {
                        name: format!("eigenvalue count below {cut:.6} at hbar={hbar}"),
                        pass: count == k_max - 1,
                        detail: format!("full {count}, reduced {}", k_max - 1),
                        informational: false,
                    });
                }
                for &k in &x.k {
                    s.error(k).map_err(|e| e.to_string())?;
                }
                (s.full, s.reduced)
            } else {
                let b = solve_band_by_overlap(model, &p, &spec, x.j, &grid, cache).map_err(|e| e.to_string())?;
                (vec![b.full], vec![b.reduced])
            };
            for &k in &x.k {
                let pred = predict_low(model, &p, &spec, x.j, k).map_err(|e| e.to_string())?;
                let (f, r) = (full[k - 1], reduced[k - 1]);
                rows.push(Row {
                    regime: "low".into(),
                    j: x.j,
                    k_or_alpha: k,
                    h: p.h,
                    hbar,
                    predicted: pred.value,
                    computed: f.value,
                    error: f.value - pred.value,
                    disc_budget: f.budget,
                    surface: None,
                });
                rows.push(Row {
                    regime: "reduced".into(),
                    j: x.j,
                    k_or_alpha: k,
                    h: p.h,
                    hbar,
                    predicted: r.value,
                    computed: f.value,
                    error: f.value - r.value,
                    disc_budget: f.budget + r.budget,
                    surface: None,
                });
            }
            Ok((rows, checks))
        })
        .collect();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for r in per_hbar {
        let (a, b) = r?;
        rows.extend(a);
        checks.extend(b);
    }
    sort_rows(&mut rows);
    let fits = if x.hbar.len() >= 3 {
        series_fits(&rows, |r| if r.regime == "low" && r.k_or_alpha > 1 { 1.5 } else { 2.0 }, x.slope_slack, false)
    } else {
        Vec::new()
    };
    Ok((rows, fits, checks))
}

pub(crate) fn run_middle(
    model: &ModelSpec,
    x: &MiddleExperiment,
    seed: u64,
    cache: Option<&dyn ResultCache>,
) -> Result<Outcome, String> {
    let j_max = *x.j.iter().max().expect("validated non-empty");
    let spec = model_spectrum(model, j_max, seed, cache)?;
    let grid = crate::effective::FiberedGridOptions { seed, ..x.grid };
    let p = h_of_hbar(x.hbar, model.a);
    let preds = x
        .j
        .iter()
        .map(|&j| predict_middle(model, &p, &spec, j).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let solves: Vec<_> = x
        .j
        .par_iter()
        .map(|&j| solve_band_by_overlap(model, &p, &spec, j, &grid, cache).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let mut reduced_ratios = Vec::new();
    let mut overlaps = Vec::new();
    for ((&j, pred), s) in x.j.iter().zip(&preds).zip(&solves) {
        let scale = spec.mu[j - 1] * x.hbar * x.hbar;
        ratios.push((s.full.value - pred.value).abs() / scale);
        reduced_ratios.push((s.full.value - s.reduced.value).abs() / scale);
        overlaps.push(s.overlap);
        rows.push(Row {
            regime: "middle".into(),
            j,
            k_or_alpha: 1,
            h: p.h,
            hbar: x.hbar,
            predicted: pred.value,
            computed: s.full.value,
            error: s.full.value - pred.value,
            disc_budget: s.full.budget,
            surface: None,
        });
        rows.push(Row {
            regime: "reduced".into(),
            j,
            k_or_alpha: 1,
            h: p.h,
            hbar: x.hbar,
            predicted: s.reduced.value,
            computed: s.full.value,
            error: s.full.value - s.reduced.value,
            disc_budget: s.full.budget + s.reduced.budget,
            surface: None,
        });
    }
    let checks = vec![
        spread_check("bounded |full - predicted| / (mu_j hbar^2)", &ratios, x.max_ratio, false),
        spread_check("bounded |full - reduced| / (mu_j hbar^2)", &reduced_ratios, x.max_ratio, true),
        Check {
            name: "quasimode overlap".into(),
            pass: overlaps.iter().all(|&o| o >= 0.5),
            detail: format!("squared overlaps {overlaps:?}"),
            informational: true,
        },
    ];
    Ok((rows, Vec::new(), checks))
}

pub(crate) fn run_surface(
    s: &SurfaceSection,
    x: &SurfaceExperiment,
    seed: u64,
    cache: Option<&dyn ResultCache>,
) -> Result<Outcome, String> {
    let v = expr::parse(&s.v, &["x", "y"]).map_err(|e| e.to_string())?;
    let cx = expr::parse(&s.curve_x, &["theta"]).map_err(|e| e.to_string())?;
    let cy = expr::parse(&s.curve_y, &["theta"]).map_err(|e| e.to_string())?;
    let gamma = build_gamma(&cx, &cy, s.orientation, s.samples).map_err(|e| e.to_string())?;
    let well = surface_well(&v, s.m, gamma).map_err(|e| e.to_string())?;
    let deg = 2 * s.m;
    let t = expr::parse(&format!("y^{deg}"), &["y"]).expect("monomial parses");
    let spec = cached_spectrum(&t, deg as f64, x.j_max, &TransverseOptions { seed, ..Default::default() }, cache)?;
    let grid = crate::hypersurface::AmbientGridOptions { seed, ..x.grid };
    let per_h: Vec<_> = x
        .h
        .par_iter()
        .map(|&h| verify_surface(&well, &spec.mu, x.alpha_max, &[h], x.gate_factor, &grid, cache).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let mm = s.m as f64;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for r in per_h.into_iter().flatten() {
        ratios.push(r.error().abs() / r.remainder_scale);
        rows.push(Row {
            regime: "surface".into(),
            j: r.j,
            k_or_alpha: r.alpha,
            h: r.h,
            hbar: r.h.powf(1.0 / (mm + 1.0)),
            predicted: r.predicted,
            computed: r.computed,
            error: r.error(),
            disc_budget: r.budget,
            surface: Some(SurfaceExtra { m: s.m, alpha: r.alpha, ell: r.ell, theta_min: r.theta_min }),
        });
    }
    sort_rows(&mut rows);
    let mut checks = vec![spread_check("bounded |computed - predicted| / (h^2 mu_j^(2+3/(2m)))", &ratios, x.max_ratio, false)];
    let mins: Vec<String> =
        well.minima.iter().map(|m| format!("theta {:.6} rho {:.8}", m.theta, m.rho)).collect();
    checks.push(Check {
        name: "profile minima".into(),
        pass: true,
        detail: format!("eta0 {:.10}; {}", well.eta0, mins.join("; ")),
        informational: true,
    });
    let fits = if x.h.len() >= 3 { series_fits(&rows, |_| 2.0, 0.2, true) } else { Vec::new() };
    for f in &fits {
        checks.push(Check {
            name: format!("slope surface j={} alpha={}", f.j, f.k_or_alpha),
            pass: f.pass,
            detail: match &f.result {
                Ok(w) => format!("slope {:.4} (reference {})", w.fit.slope, f.claimed),
                Err(e) => e.clone(),
            },
            informational: true,
        });
    }
    Ok((rows, Vec::new(), checks))
}

pub(crate) fn run_transverse(x: &TransverseExperiment, seed: u64, cache: Option<&dyn ResultCache>) -> Result<Outcome, String> {
    let g = expr::parse(&x.g, &["y"]).map_err(|e| e.to_string())?;
    let opts = TransverseOptions { tol: x.tol, seed, ..Default::default() };
    let s = cached_spectrum(&g, x.a, x.j_max, &opts, cache)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for j in 0..x.j_max {
        let expected = x.expect.as_ref().and_then(|e| e.get(j).copied()).unwrap_or(f64::NAN);
        if expected.is_finite() {
            worst = worst.max((s.mu[j] - expected).abs());
        }
        rows.push(Row {
            regime: "transverse".into(),
            j: j + 1,
            k_or_alpha: 0,
            h: 0.0,
            hbar: 0.0,
            predicted: expected,
            computed: s.mu[j],
            error: s.mu[j] - expected,
            disc_budget: s.budgets[j],
            surface: None,
        });
    }
    let mut checks = Vec::new();
    if x.expect.is_some() {
        checks.push(Check {
            name: "levels match expected values".into(),
            pass: worst <= x.expect_tol,
            detail: format!("max |mu - expected| = {worst:e} (limit {:e})", x.expect_tol),
            informational: false,
        });
    }
    Ok((rows, Vec::new(), checks))
}

/// Runs one experiment; computation errors are recorded, not propagated.
pub(crate) fn run_experiment(
    e: &Experiment,
    model: Option<&ModelSpec>,
    surface: Option<&SurfaceSection>,
    seed: u64,
    cache: Option<&dyn ResultCache>,
) -> ExperimentReport {
    let start = Instant::now();
    let out = match e {
        Experiment::Low(x) => run_low(model.expect("validated"), x, seed, cache),
        Experiment::Middle(x) => run_middle(model.expect("validated"), x, seed, cache),
        Experiment::Surface(x) => run_surface(surface.expect("validated"), x, seed, cache),
        Experiment::Transverse(x) => run_transverse(x, seed, cache),
    };
    let solve_seconds = start.elapsed().as_secs_f64();
    let (rows, fits, checks, error) = match out {
        Ok((r, f, c)) => (r, f, c, None),
        Err(msg) => (Vec::new(), Vec::new(), Vec::new(), Some(msg)),
    };
    ExperimentReport { name: e.name().to_string(), kind: e.kind().to_string(), rows, fits, checks, error, solve_seconds }
}
