//! The fibered model `h^2 D_x^2 + h^2 D_y^2 + f(x) g(y)` and its
//! semiclassical reparametrization `hbar = h^(2/(2+a))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, ExprError, PotentialExpr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("longitudinal dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("homogeneity degree must be positive and finite, got {0}")]
    InvalidDegree(f64),
    #[error("g is not homogeneous of degree {a}: g({mu}*{y}) = {lhs} but {mu}^a g({y}) = {rhs}")]
    NonHomogeneous { a: f64, mu: f64, y: f64, lhs: f64, rhs: f64 },
    #[error("f does not have its strict minimum at the origin: {0}")]
    MinimumNotAtOrigin(String),
    #[error("Hessian of f at 0 is degenerate (smallest eigenvalue {0:e})")]
    DegenerateHessian(f64),
    #[error("{which} is not positive at {point:?} (value {value})")]
    NonPositive { which: &'static str, point: Vec<f64>, value: f64 },
    #[error("f_infinity must exceed f(0) after normalization, got {0}")]
    InvalidFInfinity(f64),
    #[error("validation sampling needs a positive box and at least 3 samples per axis")]
    InvalidSampling,
}

/// A model description as read from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    /// Longitudinal dimension, 1 or 2. Variables are `x` (n = 1) or `x1, x2`.
    pub n: usize,
    /// Homogeneity degree of `g`.
    pub a: f64,
    pub f: String,
    /// Transverse potential in the variable `y`.
    pub g: String,
    /// Declared `liminf f` at infinity; `inf` is allowed.
    pub f_infinity: f64,
    #[serde(default = "default_box")]
    pub validation_box: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_box() -> f64 {
    4.0
}

fn default_samples() -> usize {
    41
}

impl RawModel {
    pub fn new(n: usize, a: f64, f: &str, g: &str, f_infinity: f64) -> Self {
        Self {
            n,
            a,
            f: f.to_string(),
            g: g.to_string(),
            f_infinity,
            validation_box: default_box(),
            samples: default_samples(),
        }
    }
}

pub fn longitudinal_vars(n: usize) -> Vec<&'static str> {
    if n == 1 {
        vec!["x"]
    } else {
        vec!["x1", "x2"]
    }
}

/// A validated fibered model with `f(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n: usize,
    pub m: usize,
    pub a: f64,
    pub f: PotentialExpr,
    pub g: PotentialExpr,
    pub f_infinity: f64,
    pub hess_f0: Vec<Vec<f64>>,
    /// Value of the user's `f(0)` that was divided out.
    pub f_scale: f64,
    pub validation_box: f64,
    pub samples: usize,
    pub warnings: Vec<String>,
}

impl ModelSpec {
    pub fn f_at(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.f.eval(x)
    }

    pub fn g_at(&self, y: f64) -> Result<f64, ExprError> {
        self.g.eval1(y)
    }

    /// `f(x)^(2/(2+a))`, the factor multiplying `mu_j` in the fiber eigenvalue.
    pub fn fiber_weight(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(self.f_at(x)?.powf(2.0 / (2.0 + self.a)))
    }

    /// Eigenvalues of the Hessian of `f` at 0, ascending.
    pub fn hessian_eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.hess_f0)
    }

    /// The user's `h` expressed for the normalized model (`f(0) = 1`).
    pub fn rescaled_h(&self, h: f64) -> f64 {
        h / self.f_scale.sqrt()
    }

    /// Round-trips back to a raw description of the normalized model.
    pub fn to_raw(&self) -> RawModel {
        RawModel {
            n: self.n,
            a: self.a,
            f: self.f.to_string(),
            g: self.g.to_string(),
            f_infinity: self.f_infinity,
            validation_box: self.validation_box,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalParams {
    pub h: f64,
    pub hbar: f64,
}

/// `hbar = h^(2/(2+a))`.
///
/// # Panics
/// If `h` or `a` is not positive.
pub fn hbar_of_h(h: f64, a: f64) -> SemiclassicalParams {
    assert!(h > 0.0 && a > 0.0, "hbar_of_h needs h > 0 and a > 0");
    SemiclassicalParams { h, hbar: h.powf(2.0 / (2.0 + a)) }
}

/// Inverse of [`hbar_of_h`].
pub fn h_of_hbar(hbar: f64, a: f64) -> SemiclassicalParams {
    assert!(hbar > 0.0 && a > 0.0, "h_of_hbar needs hbar > 0 and a > 0");
    SemiclassicalParams { h: hbar.powf((2.0 + a) / 2.0), hbar }
}

/// Maps eigenvalues of the rescaled operator to eigenvalues of the
/// original one: multiplies by `hbar^a`.
pub fn spectral_scaling(eigs: &[f64], hbar: f64, a: f64) -> Vec<f64> {
    let s = hbar.powf(a);
    eigs.iter().map(|e| e * s).collect()
}

const HOMOGENEITY_FACTORS: [f64; 3] = [0.5, 2.0, 3.7];

pub fn validate_model(raw: &RawModel) -> Result<ModelSpec, ModelError> {
    if raw.n != 1 && raw.n != 2 {
        return Err(ModelError::Dimension(raw.n));
    }
    if !(raw.a > 0.0 && raw.a.is_finite()) {
        return Err(ModelError::InvalidDegree(raw.a));
    }
    if !(raw.validation_box > 0.0) || raw.samples < 3 {
        return Err(ModelError::InvalidSampling);
    }
    let xv = longitudinal_vars(raw.n);
    let f_user = expr::parse(&raw.f, &xv)?;
    let g = expr::parse(&raw.g, &["y"])?;

    let origin = vec![0.0; raw.n];
    let f0 = f_user.eval(&origin)?;
    if !(f0 > 0.0) {
        return Err(ModelError::NonPositive { which: "f", point: origin, value: f0 });
    }
    let f = if f0 == 1.0 { f_user } else { f_user.scaled_by_inverse(f0) };
    let f_infinity = raw.f_infinity / f0;
    if !(f_infinity > 1.0) {
        return Err(ModelError::InvalidFInfinity(f_infinity));
    }

    let mut grad = Vec::with_capacity(raw.n);
    for v in &xv {
        grad.push(f.derive(v)?.eval(&origin)?);
    }
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if gnorm > 1e-8 {
        return Err(ModelError::MinimumNotAtOrigin(format!("gradient at 0 is {grad:?}")));
    }

    let mut hess = vec![vec![0.0; raw.n]; raw.n];
    for (i, vi) in xv.iter().enumerate() {
        let di = f.derive(vi)?;
        for (j, vj) in xv.iter().enumerate() {
            hess[i][j] = di.derive(vj)?.eval(&origin)?;
        }
    }
    // Symmetrize away rounding differences between the two derivative orders.
    if raw.n == 2 {
        let off = 0.5 * (hess[0][1] + hess[1][0]);
        hess[0][1] = off;
        hess[1][0] = off;
    }
    let q = sym_eigenvalues(&hess);
    if q[0] <= 1e-12 {
        return Err(ModelError::DegenerateHessian(q[0]));
    }

    let lattice = sample_lattice(raw.validation_box, raw.samples);
    for_each_point(raw.n, &lattice, |p| {
        if p.iter().all(|c| *c == 0.0) {
            return Ok(());
        }
        let v = f.eval(p)?;
        if !(v > 0.0) {
            return Err(ModelError::NonPositive { which: "f", point: p.to_vec(), value: v });
        }
        if !(v > 1.0) {
            return Err(ModelError::MinimumNotAtOrigin(format!("f({p:?}) = {v} <= f(0) = 1")));
        }
        Ok(())
    })?;

    for &y in &lattice {
        if y == 0.0 {
            continue;
        }
        let gy = g.eval1(y)?;
        if !(gy > 0.0) {
            return Err(ModelError::NonPositive { which: "g", point: vec![y], value: gy });
        }
        for mu in HOMOGENEITY_FACTORS {
            let lhs = g.eval1(mu * y)?;
            let rhs = mu.powf(raw.a) * gy;
            if (lhs - rhs).abs() > 1e-10 * (1.0 + lhs.abs()) {
                return Err(ModelError::NonHomogeneous { a: raw.a, mu, y, lhs, rhs });
            }
        }
    }

    let mut warnings = Vec::new();
    if f0 != 1.0 {
        warnings.push(format!(
            "f divided by f(0) = {f0}; h is rescaled to h/sqrt({f0}) and eigenvalues multiply by {f0}"
        ));
    }
    if f_infinity.is_finite() {
        let mut boundary_min = f64::INFINITY;
        for_each_point(raw.n, &lattice, |p| {
            if p.iter().any(|c| c.abs() == raw.validation_box) {
                boundary_min = boundary_min.min(f.eval(p)?);
            }
            Ok::<_, ModelError>(())
        })?;
        if boundary_min < 0.9 * f_infinity {
            warnings.push(format!(
                "f on the validation box boundary reaches {boundary_min}, well below the declared f_infinity {f_infinity}"
            ));
        }
    }

    Ok(ModelSpec {
        n: raw.n,
        m: 1,
        a: raw.a,
        f,
        g,
        f_infinity,
        hess_f0: hess,
        f_scale: f0,
        validation_box: raw.validation_box,
        samples: raw.samples,
        warnings,
    })
}

fn sample_lattice(half: f64, count: usize) -> Vec<f64> {
    let count = count | 1;
    (0..count)
        .map(|i| {
            let t = -half + 2.0 * half * i as f64 / (count - 1) as f64;
            if i == count / 2 {
                0.0
            } else {
                t
            }
        })
        .collect()
}

fn for_each_point<E>(n: usize, lattice: &[f64], mut visit: impl FnMut(&[f64]) -> Result<(), E>) -> Result<(), E> {
    if n == 1 {
        for &x in lattice {
            visit(&[x])?;
        }
    } else {
        for &x1 in lattice {
            for &x2 in lattice {
                visit(&[x1, x2])?;
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric 1x1 or 2x2 matrix, ascending.
pub fn sym_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    match m.len() {
        1 => vec![m[0][0]],
        2 => {
            let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
            let mean = 0.5 * (a + d);
            let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            let hi = mean + r;
            // Product form for the small root avoids cancellation.
            let det = a * d - b * b;
            let lo = if hi != 0.0 { det / hi } else { mean - r };
            vec![lo.min(hi), hi.max(lo)]
        }
        n => panic!("sym_eigenvalues supports dimension 1 or 2, got {n}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_model_validates() {
        let m = validate_model(&RawModel::new(1, 2.0, "1 + x^2", "y^2", f64::INFINITY)).unwrap();
        assert_eq!(m.hess_f0, vec![vec![2.0]]);
        assert_eq!(m.f_infinity, f64::INFINITY);
        assert_eq!(m.f_scale, 1.0);
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn quartic_transverse_is_accepted() {
        let m = validate_model(&RawModel::new(1, 4.0, "1 + x^2", "y^4", f64::INFINITY)).unwrap();
        assert_eq!(m.g_at(2.0).unwrap(), 16.0);
        assert!(matches!(
            validate_model(&RawModel::new(1, 2.0, "1 + x^2", "y^4", f64::INFINITY)),
            Err(ModelError::NonHomogeneous { .. })
        ));
    }

    #[test]
    fn normalization_divides_by_f0() {
        let m = validate_model(&RawModel::new(1, 2.0, "2 + x^2", "y^2", f64::INFINITY)).unwrap();
        assert_eq!(m.f_scale, 2.0);
        assert_eq!(m.hess_f0, vec![vec![1.0]]);
        assert_eq!(m.f_at(&[0.0]).unwrap(), 1.0);
        assert!((m.f_at(&[3.0]).unwrap() - 5.5).abs() < 1e-15);
        assert_eq!(m.warnings.len(), 1);
        assert!((m.rescaled_h(0.02) - 0.02 / 2f64.sqrt()).abs() < 1e-18);
    }

    #[test]
    fn normalization_is_idempotent() {
        for f in ["2 + x^2", "3*(1 + x^2 + 0.1*x^4)", "1 + x^2"] {
            let once = validate_model(&RawModel::new(1, 2.0, f, "y^2", 50.0)).unwrap();
            let twice = validate_model(&once.to_raw()).unwrap();
            assert_eq!(twice.f.to_string(), once.f.to_string());
            assert_eq!(twice.hess_f0, once.hess_f0);
            assert_eq!(twice.f_infinity, once.f_infinity);
            assert_eq!(twice.f_scale, 1.0);
        }
    }

    #[test]
    fn rejections() {
        let bad = |n, a, f: &str, g: &str, finf| validate_model(&RawModel::new(n, a, f, g, finf));
        assert!(matches!(bad(1, 2.0, "1 + (x-0.5)^2", "y^2", f64::INFINITY), Err(ModelError::MinimumNotAtOrigin(_))));
        assert!(matches!(bad(1, 2.0, "1 + x^4", "y^2", f64::INFINITY), Err(ModelError::DegenerateHessian(_))));
        assert!(matches!(bad(1, 2.0, "1 + x^2 - x^4 + 0.2*x^6", "y^2", f64::INFINITY), Err(ModelError::MinimumNotAtOrigin(_))));
        assert!(matches!(bad(1, 2.0, "1 + x^2", "-y^2", f64::INFINITY), Err(ModelError::NonPositive { .. })));
        assert!(matches!(bad(1, -1.0, "1 + x^2", "y^2", f64::INFINITY), Err(ModelError::InvalidDegree(_))));
        assert!(matches!(bad(1, 2.0, "1 + x^2", "y^2", 0.5), Err(ModelError::InvalidFInfinity(_))));
        assert!(matches!(bad(3, 2.0, "1 + x^2", "y^2", f64::INFINITY), Err(ModelError::Dimension(3))));
    }

    #[test]
    fn two_dimensional_hessian() {
        let m = validate_model(&RawModel::new(2, 2.0, "1 + x1^2 + 4*x2^2 + x1*x2", "y^2", f64::INFINITY)).unwrap();
        assert_eq!(m.hess_f0, vec![vec![2.0, 1.0], vec![1.0, 8.0]]);
        let q = m.hessian_eigenvalues();
        assert!((q[0] + q[1] - 10.0).abs() < 1e-14);
        assert!((q[0] * q[1] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let m = validate_model(&RawModel::new(1, 2.0, "(1 + x^2)*exp(0.3*x^2)", "y^2", f64::INFINITY)).unwrap();
        let h = 1e-3;
        let fd = (-m.f_at(&[2.0 * h]).unwrap() + 16.0 * m.f_at(&[h]).unwrap() - 30.0
            + 16.0 * m.f_at(&[-h]).unwrap()
            - m.f_at(&[-2.0 * h]).unwrap())
            / (12.0 * h * h);
        assert!((fd - m.hess_f0[0][0]).abs() < 1e-6 * m.hess_f0[0][0]);
    }

    #[test]
    fn hbar_examples() {
        assert!((hbar_of_h(0.01, 2.0).hbar - 0.1).abs() < 1e-16);
        assert_eq!(hbar_of_h(1.0, 7.0).hbar, 1.0);
        assert!((hbar_of_h(0.001, 4.0).hbar - 0.1).abs() < 1e-15);
        let p = h_of_hbar(0.1, 2.0);
        assert!((p.h - 0.01).abs() < 1e-17);
    }

    #[test]
    fn spectral_scaling_examples() {
        let s = spectral_scaling(&[1.0, 3.0], 0.1, 2.0);
        assert!((s[0] - 0.01).abs() < 1e-17 && (s[1] - 0.03).abs() < 1e-17);
        assert_eq!(spectral_scaling(&[5.0], 1.0, 3.0), vec![5.0]);
    }
}
