use faer::{Mat, Side};

use super::{fix_sign, residual, EigenError, EigenResult, SolverMeta};
use crate::discretize::DiscreteOperator;

pub const DENSE_LIMIT: usize = 4000;

/// Full eigendecomposition of a dense symmetric matrix given row-major.
/// Returns ascending eigenvalues and the matching column eigenvectors.
pub fn dense_symmetric_eigen(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), EigenError> {
    let n = a.len();
    let m = Mat::from_fn(n, n, |i, j| a[i][j]);
    let evd = m.self_adjoint_eigen(Side::Lower).map_err(|e| EigenError::Dense(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let vals = (0..n).map(|i| s[i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| u[(i, j)]).collect()).collect();
    Ok((vals, vecs))
}

/// The `k` lowest eigenpairs by full diagonalization.
pub fn dense_lowest(op: &DiscreteOperator, k: usize) -> Result<EigenResult, EigenError> {
    let n = op.dim();
    if n > DENSE_LIMIT {
        return Err(EigenError::Size { rows: n, limit: DENSE_LIMIT });
    }
    if k > n {
        return Err(EigenError::TooMany { requested: k, dim: n });
    }
    let (vals, mut vecs) = dense_symmetric_eigen(&op.to_dense())?;
    vecs.truncate(k);
    for v in vecs.iter_mut() {
        fix_sign(v);
    }
    let eigenvalues: Vec<f64> = vals[..k].to_vec();
    let residuals = eigenvalues.iter().zip(&vecs).map(|(&l, v)| residual(op, l, v)).collect();
    Ok(EigenResult {
        eigenvalues,
        residuals,
        vectors: Some(vecs),
        meta: SolverMeta { method: "dense".into(), iterations: 1, seed: 0, tol: 0.0, shift: 0.0, block: n },
    })
}
