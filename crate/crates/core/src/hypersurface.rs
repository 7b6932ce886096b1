//! Potentials vanishing to order `2m` on a closed curve `Γ` in the plane:
//! the normal profile `f` on `Γ`, its minima, the level predictions near
//! them, and sweeps against direct solves of `-h^2 Δ + V`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{memoize, ResultCache};
use crate::discretize::{
    agmon_reach, assemble_ambient, Axis, DiscretizeError, Grid, StencilOrder, WALL_AMPLITUDE, DEFAULT_ROW_CAP,
};
use crate::effective::{Gate, Prediction, Regime, Remainder};
use crate::eigensolve::{iterative_lowest, EigenError, IterOptions};
use crate::expr::{ExprError, PotentialExpr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("degenerate parametrization: {0}")]
    DegenerateParametrization(String),
    #[error("vanishing order mismatch: {0}")]
    OrderMismatch(String),
    #[error("degenerate minimum at theta = {theta}: rho^2 = {rho2:e}")]
    DegenerateMinimum { theta: f64, rho2: f64 },
    #[error("f is constant along the curve (spread {0:e})")]
    ContinuumOfMinima(f64),
    #[error("prediction outside its validity window: {0}")]
    OutsideValidity(String),
    #[error("prediction-to-eigenvalue matching is ambiguous: {0}")]
    MatchAmbiguity(String),
    #[error("potential does not vanish on the curve: V = {value:e} at theta = {theta}")]
    NotOnZeroSet { theta: f64, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Normal is the tangent turned clockwise: outward for a counterclockwise curve.
    #[default]
    Positive,
    Negative,
}

/// Samples of a closed parametric curve `θ -> (x(θ), y(θ))`, `θ ∈ [0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub theta: Vec<f64>,
    pub pos: Vec<[f64; 2]>,
    pub tangent: Vec<[f64; 2]>,
    pub normal: Vec<[f64; 2]>,
    /// `|s'(θ)|`.
    pub arc: Vec<f64>,
    /// Radius of curvature, infinite on straight pieces.
    pub radius: Vec<f64>,
}

/// Samples a closed curve given by expressions in `theta`.
pub fn build_gamma(
    x: &PotentialExpr,
    y: &PotentialExpr,
    orientation: Orientation,
    samples: usize,
) -> Result<Curve, SurfaceError> {
    if samples < 16 {
        return Err(SurfaceError::DegenerateParametrization(format!("{samples} samples are too few")));
    }
    let (dx, dy) = (x.derive("theta")?, y.derive("theta")?);
    let (ddx, ddy) = (dx.derive("theta")?, dy.derive("theta")?);
    let p0 = [x.eval1(0.0)?, y.eval1(0.0)?];
    let p1 = [x.eval1(2.0 * PI)?, y.eval1(2.0 * PI)?];
    if (p0[0] - p1[0]).hypot(p0[1] - p1[1]) > 1e-9 {
        return Err(SurfaceError::DegenerateParametrization("curve is not closed over [0, 2pi]".into()));
    }
    let sign = match orientation {
        Orientation::Positive => 1.0,
        Orientation::Negative => -1.0,
    };
    let mut c = Curve {
        theta: Vec::with_capacity(samples),
        pos: Vec::with_capacity(samples),
        tangent: Vec::with_capacity(samples),
        normal: Vec::with_capacity(samples),
        arc: Vec::with_capacity(samples),
        radius: Vec::with_capacity(samples),
    };
    for i in 0..samples {
        let t = 2.0 * PI * i as f64 / samples as f64;
        let d = [dx.eval1(t)?, dy.eval1(t)?];
        let speed = d[0].hypot(d[1]);
        if !(speed > 1e-10) {
            return Err(SurfaceError::DegenerateParametrization(format!("|s'| = {speed:e} at theta = {t}")));
        }
        let tan = [d[0] / speed, d[1] / speed];
        let cross = d[0] * ddy.eval1(t)? - d[1] * ddx.eval1(t)?;
        c.theta.push(t);
        c.pos.push([x.eval1(t)?, y.eval1(t)?]);
        c.tangent.push(tan);
        c.normal.push([sign * tan[1], -sign * tan[0]]);
        c.arc.push(speed);
        c.radius.push(if cross == 0.0 { f64::INFINITY } else { speed.powi(3) / cross.abs() });
    }
    check_simple(&c)?;
    Ok(c)
}

/// Rejects curves that come back close to themselves away from a
/// neighbourhood of each sample.
fn check_simple(c: &Curve) -> Result<(), SurfaceError> {
    let n = c.theta.len();
    let dt = 2.0 * PI / n as f64;
    let steps: Vec<f64> = c.arc.iter().map(|s| s * dt).collect();
    let min_step = steps.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + steps[i];
    }
    let total = cum[n];
    for i in 0..n {
        for j in i + 1..n {
            let along = (cum[j] - cum[i]).min(total - (cum[j] - cum[i]));
            if along < 8.0 * min_step.max(steps[i]).max(steps[j]) {
                continue;
            }
            let d = (c.pos[i][0] - c.pos[j][0]).hypot(c.pos[i][1] - c.pos[j][1]);
            if d < 0.5 * min_step {
                return Err(SurfaceError::DegenerateParametrization(format!(
                    "self-intersection near theta = {} and {}",
                    c.theta[i], c.theta[j]
                )));
            }
        }
    }
    Ok(())
}

/// Central finite-difference weights for the `d`-th derivative on nodes
/// `-r..=r` (unit spacing), from the Vandermonde system.
fn fd_weights(d: usize, r: usize) -> Vec<f64> {
    let n = 2 * r + 1;
    let nodes: Vec<f64> = (0..n).map(|i| i as f64 - r as f64).collect();
    // Solve sum_i w_i t_i^p / p! = delta_{p d} for p < n.
    let mut a = vec![vec![0.0; n + 1]; n];
    for p in 0..n {
        let fact: f64 = (1..=p).map(|v| v as f64).product();
        for i in 0..n {
            a[p][i] = nodes[i].powi(p as i32) / fact;
        }
        a[p][n] = if p == d { 1.0 } else { 0.0 };
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..n {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

fn directional_derivative(
    v: &PotentialExpr,
    point: [f64; 2],
    dir: [f64; 2],
    d: usize,
    r: usize,
    step: f64,
) -> Result<f64, ExprError> {
    let w = fd_weights(d, r);
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let t = (i as f64 - r as f64) * step;
        acc += wi * v.eval(&[point[0] + t * dir[0], point[1] + t * dir[1]])?;
    }
    Ok(acc / step.powi(d as i32))
}

fn richardson_derivative(
    v: &PotentialExpr,
    point: [f64; 2],
    dir: [f64; 2],
    d: usize,
    step: f64,
) -> Result<f64, ExprError> {
    let r = d / 2 + 3;
    let coarse = directional_derivative(v, point, dir, d, r, step)?;
    let fine = directional_derivative(v, point, dir, d, r, 0.5 * step)?;
    // Symmetric stencils on 2r+1 nodes leave an even-order error.
    let q = (2 * r + 2 - d - d % 2) as i32;
    Ok(fine + (fine - coarse) / (2f64.powi(q) - 1.0))
}

/// `(N·∇)^{2m} V / (2m)!` at `point`, checking that the lower Taylor
/// coefficients along the normal vanish.
pub fn extract_f(v: &PotentialExpr, m: usize, point: [f64; 2], normal: [f64; 2], step: f64) -> Result<f64, SurfaceError> {
    if m == 0 {
        return Err(SurfaceError::OrderMismatch("m must be at least 1".into()));
    }
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let top = richardson_derivative(v, point, normal, 2 * m, step)? / fact(2 * m);
    let scale = top.abs().max(1.0);
    for k in 0..2 * m {
        let c = if k == 0 {
            v.eval(&point)?
        } else {
            richardson_derivative(v, point, normal, k, step)? / fact(k)
        };
        if c.abs() > 1e-6 * scale {
            return Err(SurfaceError::OrderMismatch(format!(
                "normal Taylor coefficient of order {k} is {c:e}, expected 0 for vanishing order {}",
                2 * m
            )));
        }
    }
    if !(top > 0.0) || top.abs() < 1e-9 {
        return Err(SurfaceError::OrderMismatch(format!(
            "normal Taylor coefficient of order {} is {top:e}, expected positive",
            2 * m
        )));
    }
    Ok(top)
}

/// Trigonometric interpolant of uniform samples on `[0, 2π)`.
#[derive(Debug, Clone)]
struct Trig {
    a0: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Trig {
    fn new(samples: &[f64]) -> Self {
        let n = samples.len();
        let kmax = (n - 1) / 2;
        let mut a = vec![0.0; kmax];
        let mut b = vec![0.0; kmax];
        for k in 1..=kmax {
            let (mut sa, mut sb) = (0.0, 0.0);
            for (i, f) in samples.iter().enumerate() {
                let t = 2.0 * PI * (k * i) as f64 / n as f64;
                sa += f * t.cos();
                sb += f * t.sin();
            }
            a[k - 1] = 2.0 * sa / n as f64;
            b[k - 1] = 2.0 * sb / n as f64;
        }
        Trig { a0: samples.iter().sum::<f64>() / n as f64, a, b }
    }

    /// Value and first two derivatives at `t`.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (mut v, mut d1, mut d2) = (self.a0, 0.0, 0.0);
        for (i, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let k = (i + 1) as f64;
            let (s, c) = (k * t).sin_cos();
            v += a * c + b * s;
            d1 += k * (b * c - a * s);
            d2 -= k * k * (a * c + b * s);
        }
        (v, d1, d2)
    }
}

/// A minimum of `f` on the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub theta: f64,
    pub value: f64,
    /// Half the second arc-length derivative of `f`.
    pub rho2: f64,
    pub rho: f64,
    /// Sum of the `rho` values; a single term for a planar curve.
    pub trplus: f64,
}

/// Global minimum value `eta0` and every local minimum attaining it.
pub fn find_minima(f_samples: &[f64], arc: &[f64]) -> Result<(f64, Vec<Minimum>), SurfaceError> {
    assert_eq!(f_samples.len(), arc.len());
    let n = f_samples.len();
    let hi = f_samples.iter().cloned().fold(f64::MIN, f64::max);
    let lo = f_samples.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi - lo <= 1e-9 * hi.abs().max(1.0) {
        return Err(SurfaceError::ContinuumOfMinima(hi - lo));
    }
    let tf = Trig::new(f_samples);
    let ta = Trig::new(arc);
    let dt = 2.0 * PI / n as f64;
    let mut found: Vec<Minimum> = Vec::new();
    for i in 0..n {
        let (l, c, r) = (f_samples[(i + n - 1) % n], f_samples[i], f_samples[(i + 1) % n]);
        if !(c < l && c <= r) {
            continue;
        }
        // Parabolic start, then Newton on the interpolant's derivative.
        let denom = l - 2.0 * c + r;
        let mut t = i as f64 * dt + if denom > 0.0 { 0.5 * dt * (l - r) / denom } else { 0.0 };
        for _ in 0..50 {
            let (_, d1, d2) = tf.eval(t);
            if d2 <= 0.0 {
                break;
            }
            let step = d1 / d2;
            t -= step.clamp(-dt, dt);
            if step.abs() < 1e-14 {
                break;
            }
        }
        let t = t.rem_euclid(2.0 * PI);
        let (value, _, d2) = tf.eval(t);
        let speed = ta.eval(t).0;
        let rho2 = 0.5 * d2 / (speed * speed);
        if !(rho2 > 1e-8 * value.abs().max(1.0)) {
            return Err(SurfaceError::DegenerateMinimum { theta: t, rho2 });
        }
        found.push(Minimum { theta: t, value, rho2, rho: rho2.sqrt(), trplus: rho2.sqrt() });
    }
    let eta0 = found.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
    found.retain(|m| m.value - eta0 <= 1e-8 * eta0.abs().max(1.0));
    Ok((eta0, found))
}

/// Everything the level predictions need about a hypersurface well.
#[derive(Debug, Clone)]
pub struct SurfaceWell {
    pub v: PotentialExpr,
    pub m: usize,
    pub gamma: Curve,
    pub f_samples: Vec<f64>,
    pub eta0: f64,
    pub minima: Vec<Minimum>,
}

/// Builds a [`SurfaceWell`], checking that `V` vanishes on the sampled curve.
pub fn surface_well(v: &PotentialExpr, m: usize, gamma: Curve) -> Result<SurfaceWell, SurfaceError> {
    let mut f_samples = Vec::with_capacity(gamma.theta.len());
    for i in 0..gamma.theta.len() {
        let val = v.eval(&gamma.pos[i])?;
        if val.abs() > 1e-10 {
            return Err(SurfaceError::NotOnZeroSet { theta: gamma.theta[i], value: val });
        }
        // Base step: 2% of the local curvature radius, capped at unit radius.
        let step = 0.02 * gamma.radius[i].min(1.0);
        f_samples.push(extract_f(v, m, gamma.pos[i], gamma.normal[i], step)?);
    }
    let (eta0, minima) = find_minima(&f_samples, &gamma.arc)?;
    Ok(SurfaceWell { v: v.clone(), m, gamma, f_samples, eta0, minima })
}

impl SurfaceWell {
    /// `A(α) = (2 α ρ + Tr⁺) / (η₀^{m/(2m+2)} (m+1)^{1/2})` at minimum `ell` (1-based).
    pub fn level_coefficient(&self, alpha: usize, ell: usize) -> f64 {
        let mm = self.m as f64;
        let min = &self.minima[ell - 1];
        (2.0 * alpha as f64 * min.rho + min.trplus) / (self.eta0.powf(mm / (2.0 * mm + 2.0)) * (mm + 1.0).sqrt())
    }
}

/// Prediction for the level `(j, α, ℓ)` of `-h^2 Δ + V` near minimum `ell`.
/// `mu_j` is the `j`-th level of `D^2 + t^{2m}`; the gate is
/// `mu_j <= gate_factor * h^{-4m/((m+1)(2m+3))}`.
pub fn predict_surface(
    well: &SurfaceWell,
    mu_j: f64,
    j: usize,
    alpha: usize,
    ell: usize,
    h: f64,
    gate_factor: f64,
) -> Result<Prediction, SurfaceError> {
    if ell == 0 || ell > well.minima.len() {
        return Err(SurfaceError::OutsideValidity(format!("minimum index {ell} of {}", well.minima.len())));
    }
    let mm = well.m as f64;
    let value = h.powf(2.0 * mm / (mm + 1.0))
        * (well.eta0.powf(1.0 / (mm + 1.0)) * mu_j
            + h.powf(1.0 / (mm + 1.0)) * mu_j.sqrt() * well.level_coefficient(alpha, ell));
    let bound = gate_factor * h.powf(-4.0 * mm / ((mm + 1.0) * (2.0 * mm + 3.0)));
    let p = Prediction {
        regime: Regime::Surface,
        j,
        k: alpha,
        ell: Some(ell),
        value,
        remainder: Remainder::Bound {
            shape: "h^2 mu_j^(2+3/(2m))".into(),
            scale: h * h * mu_j.powf(2.0 + 1.5 / mm),
        },
        gates: vec![Gate { name: "mu_j <= factor h^(-4m/((m+1)(2m+3)))".into(), lhs: mu_j, rhs: bound, strict: false }],
        hbar_j: h / mu_j.sqrt(),
    };
    p.checked().map_err(|e| SurfaceError::OutsideValidity(e.to_string()))
}

/// Grid for the ambient solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmbientGridOptions {
    /// Square half-extent; chosen from the Agmon rule when absent.
    pub half_extent: Option<f64>,
    /// Coarse spacing; the fine grid halves it.
    pub spacing: f64,
    pub order: StencilOrder,
    pub tol: f64,
    pub seed: u64,
    /// Eigenvalues computed beyond the number of predictions.
    pub extra: usize,
    pub max_half_extent: f64,
}

impl Default for AmbientGridOptions {
    fn default() -> Self {
        Self {
            half_extent: None,
            spacing: 0.02,
            order: StencilOrder::Fourth,
            tol: 1e-9,
            seed: 0x5eed,
            extra: 2,
            max_half_extent: 20.0,
        }
    }
}

/// Half-extent along the four coordinate rays: past the outermost point
/// where `V <= level`, integrate `sqrt(V - level)/h` to the wall amplitude.
pub fn ambient_extent(v: &PotentialExpr, h: f64, level: f64, cap: f64) -> Result<f64, SurfaceError> {
    let target = -WALL_AMPLITUDE.ln() * h;
    let mut need: f64 = 0.0;
    for dir in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
        let at = |t: f64| v.eval(&[t * dir[0], t * dir[1]]);
        let mut t0 = 0.0;
        let mut t = 0.0;
        while t < cap {
            if at(t)? <= level {
                t0 = t;
            }
            t += 1e-3;
        }
        let reach = agmon_reach(|s| Ok(at(t0 + s)?), level, target, cap)?.ok_or(
            DiscretizeError::ExtentOverflow { axis: 0, required: f64::INFINITY, cap },
        )?;
        need = need.max(t0 + reach);
    }
    Ok(need)
}

/// One row of a surface sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub h: f64,
    pub j: usize,
    pub alpha: usize,
    pub ell: usize,
    pub theta_min: f64,
    pub predicted: f64,
    pub computed: f64,
    pub budget: f64,
    pub remainder_scale: f64,
}

impl SurfaceRow {
    pub fn error(&self) -> f64 {
        self.computed - self.predicted
    }
}

#[derive(Serialize)]
struct AmbientKey<'a> {
    kind: &'a str,
    v: String,
    h: f64,
    grid: &'a Grid,
    order: StencilOrder,
    k: usize,
    opts: IterOptions,
}

/// The `k` lowest eigenvalues of `-h^2 Δ + V`, Richardson-extrapolated.
pub fn ambient_lowest(
    v: &PotentialExpr,
    h: f64,
    grid: &Grid,
    k: usize,
    opts: &AmbientGridOptions,
    cache: Option<&dyn ResultCache>,
) -> Result<Vec<(f64, f64)>, SurfaceError> {
    let iter = IterOptions { tol: opts.tol, seed: opts.seed, shift: -1e-3, keep_vectors: false, ..Default::default() };
    let solve = |g: &Grid| -> Result<Vec<f64>, SurfaceError> {
        let key = AmbientKey { kind: "ambient", v: v.to_string(), h, grid: g, order: opts.order, k, opts: iter };
        memoize(cache, &key, || {
            let op = assemble_ambient(v, h, g, opts.order, DEFAULT_ROW_CAP)?;
            Ok::<_, SurfaceError>(iterative_lowest(&op, k, &iter)?.eigenvalues)
        })
    };
    let coarse = solve(grid)?;
    let fine = solve(&grid.refined())?;
    Ok(coarse
        .iter()
        .zip(&fine)
        .map(|(&c, &f)| crate::discretize::richardson(c, f, opts.order.as_int()))
        .collect())
}

/// Greedy nearest-value matching of predictions (in the given order) to
/// computed values. Returns the index of the computed value for each
/// prediction.
pub fn match_predictions(predicted: &[f64], computed: &[f64]) -> Result<Vec<usize>, SurfaceError> {
    let mut used = vec![false; computed.len()];
    let mut out = Vec::with_capacity(predicted.len());
    for (pi, &p) in predicted.iter().enumerate() {
        let best = (0..computed.len())
            .filter(|&i| !used[i])
            .min_by(|&a, &b| (computed[a] - p).abs().total_cmp(&(computed[b] - p).abs()))
            .ok_or_else(|| SurfaceError::MatchAmbiguity(format!("no computed eigenvalue left for prediction {p}")))?;
        // The chosen value must not sit closer to a distinct other prediction.
        let c = computed[best];
        for (qi, &q) in predicted.iter().enumerate() {
            let coincide = (q - p).abs() <= 1e-12 * p.abs().max(1.0);
            if qi != pi && !coincide && (c - q).abs() < (c - p).abs() {
                return Err(SurfaceError::MatchAmbiguity(format!(
                    "eigenvalue {c} is nearer prediction {q} than its match {p}"
                )));
            }
        }
        used[best] = true;
        out.push(best);
    }
    Ok(out)
}

/// Compares predictions for `j <= mus.len()`, `α <= alpha_max` and every
/// minimum with the ambient spectrum at each `h`.
#[allow(clippy::too_many_arguments)]
pub fn verify_surface(
    well: &SurfaceWell,
    mus: &[f64],
    alpha_max: usize,
    h_list: &[f64],
    gate_factor: f64,
    opts: &AmbientGridOptions,
    cache: Option<&dyn ResultCache>,
) -> Result<Vec<SurfaceRow>, SurfaceError> {
    let mut rows = Vec::new();
    for &h in h_list {
        let mut preds = Vec::new();
        for (j, &mu) in mus.iter().enumerate() {
            for alpha in 0..=alpha_max {
                for ell in 1..=well.minima.len() {
                    preds.push(predict_surface(well, mu, j + 1, alpha, ell, h, gate_factor)?);
                }
            }
        }
        preds.sort_by(|a, b| (a.j, a.k, a.ell).cmp(&(b.j, b.k, b.ell)));
        let top = preds.iter().map(|p| p.value).fold(0.0, f64::max);
        let half = match opts.half_extent {
            Some(l) => l,
            None => ambient_extent(&well.v, h, top, opts.max_half_extent)?,
        };
        let axis = Axis::with_spacing(half, opts.spacing)?;
        let grid = Grid::new(vec![axis, axis])?;
        let k = preds.len() + opts.extra;
        let computed = ambient_lowest(&well.v, h, &grid, k, opts, cache)?;
        let values: Vec<f64> = computed.iter().map(|c| c.0).collect();
        let pv: Vec<f64> = preds.iter().map(|p| p.value).collect();
        let idx = match_predictions(&pv, &values)?;
        for (p, &i) in preds.iter().zip(&idx) {
            let ell = p.ell.unwrap_or(1);
            let Remainder::Bound { scale, .. } = p.remainder else { unreachable!() };
            rows.push(SurfaceRow {
                h,
                j: p.j,
                alpha: p.k,
                ell,
                theta_min: well.minima[ell - 1].theta,
                predicted: p.value,
                computed: computed[i].0,
                budget: computed[i].1,
                remainder_scale: scale,
            });
        }
    }
    Ok(rows)
}
