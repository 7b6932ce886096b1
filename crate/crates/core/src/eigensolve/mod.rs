//! Lowest eigenpairs of symmetric discrete operators: a dense path used as
//! the oracle and shift-invert subspace iteration for large grids.

mod dense;
mod krylov;
mod subspace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::DiscreteOperator;

pub use dense::{dense_lowest, dense_symmetric_eigen, DENSE_LIMIT};
pub use krylov::{minres, pcg, KrylovOutcome};
pub use subspace::{iterative_lowest, InnerSolver, IterOptions, Target};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("dense solver limited to {limit} rows, operator has {rows}")]
    Size { rows: usize, limit: usize },
    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence { iterations: usize, best_residual: f64 },
    #[error("shifted operator is singular or could not be factored: {0}")]
    SingularShift(String),
    #[error("requested {requested} eigenpairs from an operator of dimension {dim}")]
    TooMany { requested: usize, dim: usize },
    #[error("dense eigendecomposition failed: {0}")]
    Dense(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub method: String,
    pub iterations: usize,
    pub seed: u64,
    pub tol: f64,
    pub shift: f64,
    pub block: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub vectors: Option<Vec<Vec<f64>>>,
    pub meta: SolverMeta,
}

impl EigenResult {
    pub fn drop_vectors(mut self) -> Self {
        self.vectors = None;
        self
    }
}

/// `||A v - lambda v|| / ||v||`.
pub fn residual(op: &DiscreteOperator, lambda: f64, v: &[f64]) -> f64 {
    let mut av = vec![0.0; v.len()];
    op.apply(v, &mut av);
    let r: f64 = av.iter().zip(v).map(|(a, x)| (a - lambda * x).powi(2)).sum();
    let nv: f64 = v.iter().map(|x| x * x).sum();
    (r / nv).sqrt()
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// A group of eigenvalues separated from its neighbours by gaps larger than
/// the clustering tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Index of the first member in the ascending list.
    pub start: usize,
    pub members: Vec<f64>,
}

impl Cluster {
    pub fn multiplicity(&self) -> usize {
        self.members.len()
    }

    pub fn sum(&self) -> f64 {
        self.members.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.members.len() as f64
    }
}

/// Partitions ascending `values` into clusters split at gaps `> gap_tol`.
pub fn cluster_eigenvalues(values: &[f64], gap_tol: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(c) if v - c.members.last().copied().unwrap_or(v) <= gap_tol => c.members.push(v),
            _ => out.push(Cluster { start: i, members: vec![v] }),
        }
    }
    out
}
