//! Born-Oppenheimer reduced operators, the closed-form eigenvalue
//! predictions for the fibered model, and the full-versus-reduced solves
//! that check them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{memoize, ResultCache};
use crate::discretize::{
    assemble_fibered, assemble_tensor, choose_extent, richardson, Axis, DiscreteOperator, DiscretizeError,
    ExtentLimits, Grid, StencilOrder, DEFAULT_ROW_CAP,
};
use crate::eigensolve::{iterative_lowest, EigenError, EigenResult, IterOptions, Target};
use crate::model::{sym_eigenvalues, ModelSpec, SemiclassicalParams};
use crate::transverse::{essential_floor, TransverseSpectrum};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EffectiveError {
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("Hessian of f at 0 is not positive definite (eigenvalue {0:e})")]
    DegenerateHessian(f64),
    #[error("prediction outside its validity window: {0}")]
    OutsideValidity(String),
    #[error("band assignment is ambiguous: {0}")]
    ClusterAmbiguity(String),
    #[error("transverse level {j} not available (spectrum has {j_max})")]
    MissingLevel { j: usize, j_max: usize },
}

/// Harmonic oscillator levels `sum_i (2 alpha_i + 1) sqrt(mu q_i / (2+a))`
/// over multi-indices `alpha`, ascending, first `k_max`. `q_i` are the
/// eigenvalues of `hess`.
pub fn harmonic_levels(hess: &[Vec<f64>], mu: f64, a: f64, k_max: usize) -> Result<Vec<f64>, EffectiveError> {
    let q = sym_eigenvalues(hess);
    if q[0] <= 1e-12 {
        return Err(EffectiveError::DegenerateHessian(q[0]));
    }
    let w: Vec<f64> = q.iter().map(|qi| (mu * qi / (2.0 + a)).sqrt()).collect();
    let mut levels = Vec::new();
    match w.len() {
        1 => levels.extend((0..k_max).map(|k| (2 * k + 1) as f64 * w[0])),
        _ => {
            for a1 in 0..k_max {
                for a2 in 0..k_max {
                    levels.push((2 * a1 + 1) as f64 * w[0] + (2 * a2 + 1) as f64 * w[1]);
                }
            }
        }
    }
    levels.sort_by(f64::total_cmp);
    levels.truncate(k_max);
    Ok(levels)
}

/// `sqrt(mu) tr(hess^(1/2)) / sqrt(2+a)`, with the matrix square-root trace
/// taken as `sqrt(tr + 2 sqrt(det))` in two dimensions.
pub fn trace_coefficient(hess: &[Vec<f64>], mu: f64, a: f64) -> f64 {
    let tr_sqrt = match hess.len() {
        1 => hess[0][0].sqrt(),
        2 => {
            let tr = hess[0][0] + hess[1][1];
            let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
            (tr + 2.0 * det.sqrt()).sqrt()
        }
        n => panic!("unsupported longitudinal dimension {n}"),
    };
    mu.sqrt() * tr_sqrt / (2.0 + a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Low,
    Middle,
    Surface,
}

/// The claimed remainder of a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Remainder {
    /// `O(param^exponent)`.
    Power { exponent: f64 },
    /// `<= C * shape` with the shape evaluated at this prediction.
    Bound { shape: String, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs <= rhs` (or `<` when `strict`).
    pub strict: bool,
}

impl Gate {
    fn new(name: &str, lhs: f64, rhs: f64, strict: bool) -> Self {
        Gate { name: name.to_string(), lhs, rhs, strict }
    }

    pub fn holds(&self) -> bool {
        if self.strict {
            self.lhs < self.rhs
        } else {
            self.lhs <= self.rhs
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub regime: Regime,
    pub j: usize,
    /// Longitudinal level `k` (fibered regimes) or `alpha` (surface).
    pub k: usize,
    pub ell: Option<usize>,
    pub value: f64,
    pub remainder: Remainder,
    pub gates: Vec<Gate>,
    pub hbar_j: f64,
}

impl Prediction {
    pub fn is_valid(&self) -> bool {
        self.gates.iter().all(Gate::holds) && self.value.is_finite()
    }

    pub(crate) fn checked(self) -> Result<Self, EffectiveError> {
        if let Some(g) = self.gates.iter().find(|g| !g.holds()) {
            let op = if g.strict { "<" } else { "<=" };
            return Err(EffectiveError::OutsideValidity(format!("{} fails: {} {op} {}", g.name, g.lhs, g.rhs)));
        }
        Ok(self)
    }
}

fn level(spec: &TransverseSpectrum, j: usize) -> Result<f64, EffectiveError> {
    if j == 0 || j > spec.j_max() {
        return Err(EffectiveError::MissingLevel { j, j_max: spec.j_max() });
    }
    Ok(spec.mu[j - 1])
}

/// `mu_j + hbar e_k(mu_j)`, valid below the essential spectrum.
pub fn predict_low(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    spec: &TransverseSpectrum,
    j: usize,
    k: usize,
) -> Result<Prediction, EffectiveError> {
    let mu = level(spec, j)?;
    let e = harmonic_levels(&model.hess_f0, mu, model.a, k)?;
    let floor = essential_floor(model, spec.mu[0]);
    Prediction {
        regime: Regime::Low,
        j,
        k,
        ell: None,
        value: mu + params.hbar * e[k - 1],
        remainder: Remainder::Power { exponent: if k == 1 { 2.0 } else { 1.5 } },
        gates: vec![Gate::new("mu_j below the essential floor", mu, floor, true)],
        hbar_j: params.hbar / mu.sqrt(),
    }
    .checked()
}

/// `mu_j + hbar sqrt(mu_j) tr(hess^(1/2)) / sqrt(2+a)` for large `mu_j`.
pub fn predict_middle(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    spec: &TransverseSpectrum,
    j: usize,
) -> Result<Prediction, EffectiveError> {
    let mu = level(spec, j)?;
    let value = mu + params.hbar * harmonic_levels(&model.hess_f0, mu, model.a, 1)?[0];
    Prediction {
        regime: Regime::Middle,
        j,
        k: 1,
        ell: None,
        value,
        remainder: Remainder::Bound { shape: "mu_j hbar^2".into(), scale: mu * params.hbar * params.hbar },
        gates: vec![
            Gate::new("a >= 2", 2.0, model.a, false),
            Gate::new("f_infinity = infinity", 0.0, if model.f_infinity.is_infinite() { 1.0 } else { 0.0 }, true),
            Gate::new("mu_j <= hbar^-2", mu, params.hbar.powi(-2), false),
        ],
        hbar_j: params.hbar / mu.sqrt(),
    }
    .checked()
}

/// `hbar^2 D_x^2 + mu_j f(x)^(2/(2+a))` on a grid of the longitudinal axes.
pub fn reduced_operator(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    mu_j: f64,
    grid: &Grid,
    order: StencilOrder,
) -> Result<DiscreteOperator, EffectiveError> {
    if grid.dim() != model.n {
        return Err(DiscretizeError::InvalidGrid(format!("expected {} axes, got {}", model.n, grid.dim())).into());
    }
    let pot: Vec<f64> = (0..grid.size())
        .map(|i| Ok(mu_j * model.fiber_weight(&grid.point(i))?))
        .collect::<Result<_, DiscretizeError>>()?;
    Ok(assemble_tensor(grid, &vec![params.hbar * params.hbar; model.n], order, &pot, DEFAULT_ROW_CAP)?)
}

/// Grid and solver settings for fibered solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberedGridOptions {
    pub order: StencilOrder,
    /// Coarse-grid points per harmonic length of the reduced operator.
    pub ppw_x: f64,
    /// Coarse-grid points per unit of `mu^(-1/2)` across the fiber.
    pub ppw_y: f64,
    /// Explicit coarse spacings, overriding the `ppw` rules.
    pub dx: Option<f64>,
    pub dy: Option<f64>,
    pub limits: ExtentLimits,
    pub row_cap: usize,
    pub tol: f64,
    pub seed: u64,
    /// Eigenpairs computed around the shift when a band is selected by overlap.
    pub band_window: usize,
}

impl Default for FiberedGridOptions {
    fn default() -> Self {
        Self {
            order: StencilOrder::Fourth,
            ppw_x: 10.0,
            ppw_y: 16.0,
            dx: None,
            dy: None,
            limits: ExtentLimits::default(),
            row_cap: DEFAULT_ROW_CAP,
            tol: 1e-8,
            seed: 0x5eed,
            band_window: 12,
        }
    }
}

/// A Richardson-extrapolated eigenvalue with its two-grid inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub value: f64,
    pub budget: f64,
    pub coarse: f64,
    pub fine: f64,
}

impl Extrapolated {
    pub fn from_pair(coarse: f64, fine: f64, order: StencilOrder) -> Self {
        let (value, budget) = richardson(coarse, fine, order.as_int());
        Extrapolated { value, budget, coarse, fine }
    }
}

fn extrapolate_all(coarse: &[f64], fine: &[f64], order: StencilOrder) -> Vec<Extrapolated> {
    coarse.iter().zip(fine).map(|(&c, &f)| Extrapolated::from_pair(c, f, order)).collect()
}

/// Coarse grid for band `j` of the fibered operator: longitudinal axes
/// first, transverse axis last.
pub fn fibered_grid(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    mus: &[f64],
    k_max: usize,
    opts: &FiberedGridOptions,
) -> Result<Grid, EffectiveError> {
    let ext = choose_extent(model, params, mus, k_max, opts.limits)?;
    let mu_lo = mus.iter().cloned().fold(f64::INFINITY, f64::min);
    let mu_hi = mus.iter().cloned().fold(f64::MIN, f64::max);
    let q_max = *sym_eigenvalues(&model.hess_f0).last().expect("non-empty Hessian");
    let ell_x = (params.hbar * params.hbar * (2.0 + model.a) / (mu_lo * q_max)).powf(0.25);
    let dx = opts.dx.unwrap_or(ell_x / opts.ppw_x);
    let dy = opts.dy.unwrap_or(1.0 / (opts.ppw_y * mu_hi.sqrt()));
    let mut axes = Vec::with_capacity(model.n + 1);
    for &l in &ext[..model.n] {
        axes.push(Axis::with_spacing(l, dx)?);
    }
    axes.push(Axis::with_spacing(ext[model.n], dy)?);
    Ok(Grid::new(axes)?)
}

#[derive(Serialize)]
struct SolveKey<'a> {
    kind: &'a str,
    f: String,
    g: String,
    a: f64,
    hbar: f64,
    mu: f64,
    grid: &'a Grid,
    order: StencilOrder,
    k: usize,
    opts: IterOptions,
}

fn fibered_eigs(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    grid: &Grid,
    k: usize,
    iter: IterOptions,
    opts: &FiberedGridOptions,
    cache: Option<&dyn ResultCache>,
) -> Result<EigenResult, EffectiveError> {
    let key = SolveKey {
        kind: "fibered",
        f: model.f.to_string(),
        g: model.g.to_string(),
        a: model.a,
        hbar: params.hbar,
        mu: 0.0,
        grid,
        order: opts.order,
        k,
        opts: iter,
    };
    memoize(cache, &key, || {
        let op = assemble_fibered(model, params, grid, opts.order, opts.row_cap)?;
        Ok::<_, EffectiveError>(iterative_lowest(&op, k, &iter)?.drop_vectors())
    })
}

fn reduced_eigs(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    mu: f64,
    grid: &Grid,
    k: usize,
    iter: IterOptions,
    opts: &FiberedGridOptions,
    cache: Option<&dyn ResultCache>,
) -> Result<EigenResult, EffectiveError> {
    let key = SolveKey {
        kind: "reduced",
        f: model.f.to_string(),
        g: String::new(),
        a: model.a,
        hbar: params.hbar,
        mu,
        grid,
        order: opts.order,
        k,
        opts: iter,
    };
    memoize(cache, &key, || {
        let op = reduced_operator(model, params, mu, grid, opts.order)?;
        Ok::<_, EffectiveError>(iterative_lowest(&op, k, &iter)?.drop_vectors())
    })
}

/// Full and reduced spectra for the lowest transverse band at one `hbar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowBandSolve {
    pub hbar: f64,
    /// Lowest `k_max` eigenvalues of the full operator, no band selection.
    pub full: Vec<Extrapolated>,
    /// Lowest `k_max` eigenvalues of the reduced operator with `mu_1`.
    pub reduced: Vec<Extrapolated>,
    /// Number of the `full` eigenvalues assigned to band 1 by proximity.
    pub band_count: usize,
    pub grid: Grid,
}

impl LowBandSolve {
    /// Full-minus-reduced error for level `k` of band 1, with the combined budget.
    pub fn error(&self, k: usize) -> Result<(f64, f64), EffectiveError> {
        if k > self.band_count {
            return Err(EffectiveError::ClusterAmbiguity(format!(
                "only {} eigenvalues lie within half a gap of mu_1 at hbar = {}",
                self.band_count, self.hbar
            )));
        }
        let (f, r) = (&self.full[k - 1], &self.reduced[k - 1]);
        Ok((f.value - r.value, f.budget + r.budget))
    }
}

/// Solves the full fibered operator and the reduced operator with `mu_1`
/// on matched coarse and fine grids and Richardson-extrapolates both.
pub fn solve_low_band(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    spec: &TransverseSpectrum,
    k_max: usize,
    opts: &FiberedGridOptions,
    cache: Option<&dyn ResultCache>,
) -> Result<LowBandSolve, EffectiveError> {
    let mu1 = level(spec, 1)?;
    let grid = fibered_grid(model, params, &[mu1], k_max, opts)?;
    let fine = grid.refined();
    let iter = IterOptions { tol: opts.tol, seed: opts.seed, shift: 0.98 * mu1, keep_vectors: false, ..Default::default() };
    let xg = |g: &Grid| Grid { axes: g.axes[..model.n].to_vec() };

    let fc = fibered_eigs(model, params, &grid, k_max, iter, opts, cache)?;
    let ff = fibered_eigs(model, params, &fine, k_max, iter, opts, cache)?;
    let rc = reduced_eigs(model, params, mu1, &xg(&grid), k_max, iter, opts, cache)?;
    let rf = reduced_eigs(model, params, mu1, &xg(&fine), k_max, iter, opts, cache)?;
    let full = extrapolate_all(&fc.eigenvalues, &ff.eigenvalues, opts.order);
    let reduced = extrapolate_all(&rc.eigenvalues, &rf.eigenvalues, opts.order);

    let half_gap = if spec.j_max() >= 2 { 0.5 * (spec.mu[1] - mu1) } else { f64::INFINITY };
    let band_count = full.iter().take_while(|e| (e.value - mu1).abs() < half_gap).count();
    Ok(LowBandSolve { hbar: params.hbar, full, reduced, band_count, grid })
}

/// Eigenvalue of the full operator attached to band `j`, level 1, selected
/// by overlap with the Born-Oppenheimer quasimode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSolve {
    pub j: usize,
    pub hbar: f64,
    pub full: Extrapolated,
    pub reduced: Extrapolated,
    /// Smallest squared overlap met on the two grids.
    pub overlap: f64,
    pub grid: Grid,
}

fn quasimode(
    model: &ModelSpec,
    spec: &TransverseSpectrum,
    j: usize,
    grid: &Grid,
    psi: &[f64],
) -> Result<Vec<f64>, EffectiveError> {
    let xg = Grid { axes: grid.axes[..model.n].to_vec() };
    let yn = grid.axes[model.n].interior_nodes();
    let e = 1.0 / (2.0 + model.a);
    let mut q = Vec::with_capacity(grid.size());
    for (ix, p) in psi.iter().enumerate() {
        let f = model.f_at(&xg.point(ix)).map_err(DiscretizeError::from)?;
        let s = f.powf(e);
        for &y in &yn {
            q.push(p * s.sqrt() * spec.phi_at(j, s * y));
        }
    }
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(q.into_iter().map(|v| v / norm).collect())
}

fn band_on_grid(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    spec: &TransverseSpectrum,
    j: usize,
    grid: &Grid,
    opts: &FiberedGridOptions,
) -> Result<(f64, f64, f64), EffectiveError> {
    let mu = level(spec, j)?;
    let xg = Grid { axes: grid.axes[..model.n].to_vec() };
    let red = reduced_operator(model, params, mu, &xg, opts.order)?;
    let iter = IterOptions { tol: opts.tol, seed: opts.seed, shift: 0.98 * mu, ..Default::default() };
    let r = iterative_lowest(&red, 1, &iter)?;
    let psi = &r.vectors.as_ref().expect("vectors kept")[0];
    let target = r.eigenvalues[0];
    let q = quasimode(model, spec, j, grid, psi)?;

    let full = assemble_fibered(model, params, grid, opts.order, opts.row_cap)?;
    let k = opts.band_window.min(full.dim());
    let iter = IterOptions { tol: opts.tol, seed: opts.seed, shift: target, target: Target::Nearest, ..Default::default() };
    let res = iterative_lowest(&full, k, &iter)?;
    let vecs = res.vectors.as_ref().expect("vectors kept");
    let (best, ov) = vecs
        .iter()
        .map(|v| v.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>().powi(2))
        .enumerate()
        .fold((0, -1.0), |acc, (i, o)| if o > acc.1 { (i, o) } else { acc });
    if ov < 0.5 {
        return Err(EffectiveError::ClusterAmbiguity(format!(
            "no eigenvector near {target:.6} overlaps the band-{j} quasimode by more than 0.5 (best {ov:.3})"
        )));
    }
    Ok((res.eigenvalues[best], target, ov))
}

/// Band-`j`, level-1 eigenvalue of the full operator next to the reduced
/// eigenvalue, both extrapolated over a coarse and a fine grid.
pub fn solve_band_by_overlap(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    spec: &TransverseSpectrum,
    j: usize,
    opts: &FiberedGridOptions,
    cache: Option<&dyn ResultCache>,
) -> Result<BandSolve, EffectiveError> {
    let mu = level(spec, j)?;
    let grid = fibered_grid(model, params, &[mu], 1, opts)?;
    #[derive(Serialize)]
    struct Key<'a> {
        kind: &'a str,
        f: String,
        g: String,
        a: f64,
        hbar: f64,
        j: usize,
        mu: f64,
        grid: &'a Grid,
        opts: &'a FiberedGridOptions,
    }
    let key = Key {
        kind: "band-overlap",
        f: model.f.to_string(),
        g: model.g.to_string(),
        a: model.a,
        hbar: params.hbar,
        j,
        mu,
        grid: &grid,
        opts,
    };
    memoize(cache, &key, || {
        let (fc, rc, oc) = band_on_grid(model, params, spec, j, &grid, opts)?;
        let fine = grid.refined();
        let (ff, rf, of) = band_on_grid(model, params, spec, j, &fine, opts)?;
        Ok(BandSolve {
            j,
            hbar: params.hbar,
            full: Extrapolated::from_pair(fc, ff, opts.order),
            reduced: Extrapolated::from_pair(rc, rf, opts.order),
            overlap: oc.min(of),
            grid: grid.clone(),
        })
    })
}
