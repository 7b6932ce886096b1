//! The transverse model problem `D^2 + g` on the line: levels `mu_j`,
//! eigenfunctions `phi_j`, parity, moments and the first-order corrector.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{
    assemble_1d, richardson, transverse_extent, Axis, DiscreteOperator, DiscretizeError, ExtentLimits, Grid,
    StencilOrder,
};
use crate::eigensolve::{iterative_lowest, EigenError, IterOptions};
use crate::expr::PotentialExpr;
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransverseError {
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("level {j} is not isolated (gap {gap:e}); the corrector needs a simple eigenvalue")]
    DegenerateLevel { j: usize, gap: f64 },
    #[error("could not reach tolerance {tol:e}: budget {budget:e} with {points} points")]
    Unresolved { tol: f64, budget: f64, points: usize },
    #[error("corrector needs g = t^{two_m}, but the spectrum was computed for degree {a}")]
    DegreeMismatch { a: f64, two_m: usize },
    #[error("level index {j} outside 1..={j_max}")]
    IndexOutOfRange { j: usize, j_max: usize },
    #[error("corrector solve left relative residual {0:e}")]
    CorrectorStalled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransverseOptions {
    /// Target for the two-grid discretization budget of each `mu_j`.
    pub tol: f64,
    pub order: StencilOrder,
    /// Starting number of grid points on the coarse grid.
    pub initial_points: usize,
    /// Refinement stops (with an error) beyond this many fine-grid points.
    pub max_points: usize,
    pub limits: ExtentLimits,
    pub seed: u64,
}

impl Default for TransverseOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            order: StencilOrder::Fourth,
            initial_points: 401,
            max_points: 40_000,
            limits: ExtentLimits::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransverseSpectrum {
    pub a: f64,
    /// Richardson-extrapolated levels, ascending.
    pub mu: Vec<f64>,
    /// Two-grid budget of each level.
    pub budgets: Vec<f64>,
    /// Eigenvalues of the fine-grid operator itself.
    pub fine_eigenvalues: Vec<f64>,
    /// Eigenfunctions on the interior nodes of `axis`, with `sum phi^2 Δ = 1`.
    pub phi: Vec<Vec<f64>>,
    pub axis: Axis,
    pub order: StencilOrder,
    pub parity: Option<Vec<Parity>>,
}

impl TransverseSpectrum {
    pub fn j_max(&self) -> usize {
        self.mu.len()
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.axis.interior_nodes()
    }

    /// Smallest gap between consecutive levels.
    pub fn min_gap(&self) -> f64 {
        self.mu.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation of `phi_j` (1-based `j`); zero outside the grid.
    pub fn phi_at(&self, j: usize, t: f64) -> f64 {
        let d = self.axis.spacing();
        let s = (t + self.axis.half_extent) / d;
        if !(s > 0.0) || s >= (self.axis.points - 1) as f64 {
            return 0.0;
        }
        let i = s.floor() as usize;
        let w = s - i as f64;
        let node = |i: usize| if i == 0 || i == self.axis.points - 1 { 0.0 } else { self.phi[j - 1][i - 1] };
        (1.0 - w) * node(i) + w * node(i + 1)
    }

    /// Operator `D^2 + g` on the fine grid.
    pub fn fine_operator(&self, g: &PotentialExpr) -> Result<DiscreteOperator, TransverseError> {
        Ok(assemble_1d(g, &Grid { axes: vec![self.axis] }, 1.0, self.order)?)
    }
}

fn solve_on(
    g: &PotentialExpr,
    axis: Axis,
    order: StencilOrder,
    k: usize,
    shift: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), TransverseError> {
    let op = assemble_1d(g, &Grid { axes: vec![axis] }, 1.0, order)?;
    let opts = IterOptions { tol: 1e-9, seed, shift, polish: 6, ..Default::default() };
    let r = iterative_lowest(&op, k, &opts)?;
    Ok((r.eigenvalues, r.vectors.expect("vectors requested")))
}

fn is_even(g: &PotentialExpr, half: f64) -> Result<bool, TransverseError> {
    for i in 1..=64 {
        let t = half * i as f64 / 64.0;
        let (p, m) = (g.eval1(t).map_err(DiscretizeError::from)?, g.eval1(-t).map_err(DiscretizeError::from)?);
        if (p - m).abs() > 1e-12 * (1.0 + p.abs()) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Lowest `j_max` levels of `D^2 + g`, refined until every two-grid budget
/// is below `opts.tol`.
pub fn transverse_spectrum(
    g: &PotentialExpr,
    a: f64,
    j_max: usize,
    opts: &TransverseOptions,
) -> Result<TransverseSpectrum, TransverseError> {
    assert!(j_max >= 1);
    let order_p = opts.order.as_int();
    let mut floor = f64::INFINITY;
    for i in 0..=200 {
        let t = -opts.limits.max + 2.0 * opts.limits.max * i as f64 / 200.0;
        floor = floor.min(g.eval1(t).map_err(DiscretizeError::from)?);
    }
    let shift = floor.min(0.0) - 1.0;

    let mut mu_est = 1.0f64;
    let mut half = transverse_extent(g, mu_est, opts.limits)?;
    let mut points = opts.initial_points | 1;
    loop {
        let mut coarse_axis = Axis::new(half, points)?;
        let mut coarse = solve_on(g, coarse_axis, opts.order, j_max, shift, opts.seed)?;
        let result = loop {
            let fine_axis = coarse_axis.refined();
            let fine = solve_on(g, fine_axis, opts.order, j_max, shift, opts.seed)?;
            let (mu, budgets): (Vec<f64>, Vec<f64>) = coarse
                .0
                .iter()
                .zip(&fine.0)
                .map(|(&c, &f)| richardson(c, f, order_p))
                .unzip();
            let worst = budgets.iter().cloned().fold(0.0, f64::max);
            if worst <= opts.tol {
                break (mu, budgets, fine, fine_axis);
            }
            if fine_axis.refined().points > opts.max_points {
                return Err(TransverseError::Unresolved { tol: opts.tol, budget: worst, points: fine_axis.points });
            }
            coarse_axis = fine_axis;
            coarse = fine;
        };
        let (mu, budgets, fine, fine_axis) = result;
        let top = *mu.last().expect("j_max >= 1");
        if top > mu_est {
            mu_est = top * 1.05;
            let needed = transverse_extent(g, mu_est, opts.limits)?;
            if needed > half {
                half = needed;
                points = opts.initial_points | 1;
                continue;
            }
        }
        let d = fine_axis.spacing();
        let scale = 1.0 / d.sqrt();
        let phi: Vec<Vec<f64>> = fine.1.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let parity = if is_even(g, half)? { Some(phi.iter().map(|p| parity_of(p)).collect()) } else { None };
        return Ok(TransverseSpectrum {
            a,
            mu,
            budgets,
            fine_eigenvalues: fine.0,
            phi,
            axis: fine_axis,
            order: opts.order,
            parity,
        });
    }
}

fn parity_of(phi: &[f64]) -> Parity {
    let n = phi.len();
    let (mut sym, mut anti) = (0.0, 0.0);
    for i in 0..n {
        let r = phi[n - 1 - i];
        sym += (phi[i] - r).powi(2);
        anti += (phi[i] + r).powi(2);
    }
    if sym <= anti {
        Parity::Even
    } else {
        Parity::Odd
    }
}

/// `lambda_j(x) = mu_j f(x)^(2/(2+a))`.
pub fn fiber_eigenvalue(mu_j: f64, f_at_x: f64, a: f64) -> f64 {
    mu_j * f_at_x.powf(2.0 / (2.0 + a))
}

/// Lower bound `mu_1 f_infinity^(2/(2+a))` of the essential spectrum.
pub fn essential_floor(model: &ModelSpec, mu_1: f64) -> f64 {
    if model.f_infinity.is_infinite() {
        f64::INFINITY
    } else {
        fiber_eigenvalue(mu_1, model.f_infinity, model.a)
    }
}

/// Trapezoidal `∫ t^(2m+1) phi^2 dt` on the interior nodes of `axis`.
pub fn odd_moment(phi: &[f64], axis: &Axis, m: u32) -> f64 {
    let d = axis.spacing();
    phi.iter()
        .enumerate()
        .map(|(k, p)| axis.interior_node(k).powi(2 * m as i32 + 1) * p * p)
        .sum::<f64>()
        * d
}

/// `||t phi'||_2` by centered differences, used for the moment bounds.
pub fn derivative_moment(phi: &[f64], axis: &Axis) -> f64 {
    let d = axis.spacing();
    let n = phi.len();
    let at = |i: isize| if i < 0 || i as usize >= n { 0.0 } else { phi[i as usize] };
    let mut s = 0.0;
    for k in 0..n {
        let dp = (at(k as isize + 1) - at(k as isize - 1)) / (2.0 * d);
        let t = axis.interior_node(k);
        s += (t * dp).powi(2);
    }
    (s * d).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrector {
    /// Solution sampled on the same nodes as `phi_j`.
    pub values: Vec<f64>,
    pub relative_residual: f64,
    /// `|∫ phi phi_j dt|`.
    pub orthogonality: f64,
    /// Iterative-refinement passes after the sparse LU solve.
    pub refinements: usize,
}

/// Solves `(A - mu_j) phi = t^(2m+1) phi_j` on the orthogonal complement of
/// `phi_j`, where `A` is the fine-grid operator for `g = t^(2m)` and `mu_j`
/// its discrete eigenvalue.
pub fn corrector_solve(
    spec: &TransverseSpectrum,
    g: &PotentialExpr,
    j: usize,
    m: u32,
) -> Result<Corrector, TransverseError> {
    if j == 0 || j > spec.j_max() {
        return Err(TransverseError::IndexOutOfRange { j, j_max: spec.j_max() });
    }
    if spec.a != 2.0 * m as f64 {
        return Err(TransverseError::DegreeMismatch { a: spec.a, two_m: 2 * m as usize });
    }
    let lam = spec.fine_eigenvalues[j - 1];
    let mut gap = f64::INFINITY;
    if j > 1 {
        gap = gap.min(lam - spec.fine_eigenvalues[j - 2]);
    }
    if j < spec.j_max() {
        gap = gap.min(spec.fine_eigenvalues[j] - lam);
    }
    if gap <= 1e-6 * (1.0 + lam.abs()) {
        return Err(TransverseError::DegenerateLevel { j, gap });
    }
    let op = spec.fine_operator(g)?;
    let d = spec.axis.spacing();
    let n = op.dim();
    // Unit vector in the discrete l2 inner product.
    let v: Vec<f64> = spec.phi[j - 1].iter().map(|p| p * d.sqrt()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut rhs: Vec<f64> = (0..n)
        .map(|k| spec.axis.interior_node(k).powi(2 * m as i32 + 1) * spec.phi[j - 1][k])
        .collect();
    let c = dot(&rhs, &v);
    for (r, vi) in rhs.iter_mut().zip(&v) {
        *r -= c * vi;
    }

    // Bordered system [A - mu, v; v^T, 0] [x; c] = [rhs; 0], which is
    // nonsingular when mu is simple.
    let mut triplets = Vec::with_capacity(op.nnz() + 2 * n);
    for i in 0..n {
        let (cols, vals) = op.row(i);
        for (&c, &a) in cols.iter().zip(vals) {
            triplets.push(Triplet::new(i, c, if c == i { a - lam } else { a }));
        }
        triplets.push(Triplet::new(i, n, v[i]));
        triplets.push(Triplet::new(n, i, v[i]));
    }
    let bordered = SparseColMat::<usize, f64>::try_new_from_triplets(n + 1, n + 1, &triplets)
        .map_err(|e| EigenError::SingularShift(format!("{e:?}")))?;
    let lu = bordered.sp_lu().map_err(|e| EigenError::SingularShift(format!("{e:?}")))?;
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n];
        op.apply(&x[..n], &mut y);
        let mut out: Vec<f64> = y.iter().zip(&x[..n]).zip(&v).map(|((a, xi), vi)| a - lam * xi + x[n] * vi).collect();
        out.push(dot(&x[..n], &v));
        out
    };
    let mut b = rhs.clone();
    b.push(0.0);
    let mut sol = Mat::<f64>::zeros(n + 1, 1);
    let refinements = 3;
    let mut r = b.clone();
    for _ in 0..refinements {
        let mut dx = Mat::from_fn(n + 1, 1, |i, _| r[i]);
        lu.solve_in_place(dx.as_mut());
        sol += &dx;
        let x: Vec<f64> = (0..=n).map(|i| sol[(i, 0)]).collect();
        r = b.iter().zip(apply(&x)).map(|(bi, ai)| bi - ai).collect();
    }
    let x: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();

    let mut ax = vec![0.0; n];
    op.apply(&x, &mut ax);
    let rnorm: f64 = ax.iter().zip(&x).zip(&rhs).map(|((a, xi), b)| (a - lam * xi - b).powi(2)).sum::<f64>().sqrt();
    let bnorm: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    let relative_residual = if bnorm > 0.0 { rnorm / bnorm } else { 0.0 };
    if relative_residual > 1e-8 {
        return Err(TransverseError::CorrectorStalled(relative_residual));
    }
    let orthogonality = x.iter().zip(&spec.phi[j - 1]).map(|(a, b)| a * b).sum::<f64>().abs() * d;
    Ok(Corrector { values: x, relative_residual, orthogonality, refinements })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolve::dense_symmetric_eigen;
    use crate::expr::parse;

    fn g(text: &str) -> PotentialExpr {
        parse(text, &["y"]).unwrap()
    }

    #[test]
    fn harmonic_levels_are_odd_integers() {
        let s = transverse_spectrum(&g("y^2"), 2.0, 6, &TransverseOptions::default()).unwrap();
        for (j, mu) in s.mu.iter().enumerate() {
            assert!((mu - (2 * j + 1) as f64).abs() < 1e-8, "{j}: {mu}");
        }
        let parity = s.parity.as_ref().unwrap();
        for (j, p) in parity.iter().enumerate() {
            assert_eq!(*p, if j % 2 == 0 { Parity::Even } else { Parity::Odd });
        }
        let d = s.axis.spacing();
        for i in 0..6 {
            for k in 0..6 {
                let ip: f64 = s.phi[i].iter().zip(&s.phi[k]).map(|(a, b)| a * b).sum::<f64>() * d;
                assert!((ip - if i == k { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fiber_and_floor() {
        assert_eq!(fiber_eigenvalue(3.0, 1.0, 2.0), 3.0);
        assert_eq!(fiber_eigenvalue(1.0, 16.0, 2.0), 4.0);
        use crate::model::{validate_model, RawModel};
        let m = validate_model(&RawModel::new(1, 2.0, "1 + x^2", "y^2", f64::INFINITY)).unwrap();
        assert_eq!(essential_floor(&m, 1.0), f64::INFINITY);
        let m = validate_model(&RawModel::new(1, 2.0, "4 - 3*exp(-x^2)", "y^2", 4.0)).unwrap();
        assert_eq!(essential_floor(&m, 1.0), 2.0);
    }

    #[test]
    fn odd_moments_vanish_and_can_fail() {
        let s = transverse_spectrum(&g("y^4"), 4.0, 4, &TransverseOptions::default()).unwrap();
        for j in 0..4 {
            for m in 1..=2 {
                assert!(odd_moment(&s.phi[j], &s.axis, m).abs() < 1e-9);
            }
        }
        let broken = transverse_spectrum(&g("y^4 + 0.1*y^3"), 4.0, 2, &TransverseOptions::default()).unwrap();
        assert!(broken.parity.is_none());
        assert!(odd_moment(&broken.phi[0], &broken.axis, 1).abs() > 1e-3);
    }

    #[test]
    fn derivative_moment_of_hermite_functions() {
        // ||t phi_n'||^2 = (2n^2 + 2n + 3)/4 for the harmonic oscillator.
        let s = transverse_spectrum(&g("y^2"), 2.0, 5, &TransverseOptions::default()).unwrap();
        for n in 0..5 {
            let exact = 0.5 * ((2 * n * n + 2 * n + 3) as f64).sqrt();
            let got = derivative_moment(&s.phi[n], &s.axis);
            assert!((got - exact).abs() < 1e-5, "n={n}: {got} vs {exact}");
            assert!(got <= s.mu[n]);
        }
    }

    #[test]
    fn corrector_matches_dense_pseudoinverse() {
        let opts = TransverseOptions { initial_points: 301, tol: 1e-7, ..Default::default() };
        let gg = g("y^2");
        let s = transverse_spectrum(&gg, 2.0, 3, &opts).unwrap();
        assert!(s.axis.points <= 2001);
        let c = corrector_solve(&s, &gg, 1, 1).unwrap();
        assert!(c.relative_residual <= 1e-8);
        assert!(c.orthogonality <= 1e-9);

        let op = s.fine_operator(&gg).unwrap();
        let (vals, vecs) = dense_symmetric_eigen(&op.to_dense()).unwrap();
        let n = op.dim();
        let rhs: Vec<f64> = (0..n).map(|k| s.axis.interior_node(k).powi(3) * s.phi[0][k]).collect();
        let mut x = vec![0.0; n];
        for (l, v) in vals.iter().zip(&vecs).skip(1) {
            let c: f64 = v.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() / (l - vals[0]);
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += c * vi;
            }
        }
        let err = x.iter().zip(&c.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn degree_mismatch_is_rejected() {
        let opts = TransverseOptions { tol: 1e-6, ..Default::default() };
        let s = transverse_spectrum(&g("y^2"), 2.0, 2, &opts).unwrap();
        assert!(matches!(corrector_solve(&s, &g("y^2"), 1, 2), Err(TransverseError::DegreeMismatch { .. })));
    }
}
