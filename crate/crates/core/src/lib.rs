//! Semiclassical eigenvalue asymptotics for Schrödinger operators whose
//! potential degenerates along a fiber (`f(x) g(y)` with `g` homogeneous)
//! or along a closed curve, checked against finite-difference spectra.

pub mod cache;
pub mod discretize;
pub mod effective;
pub mod eigensolve;
pub mod expr;
pub mod harness;
pub mod hypersurface;
pub mod model;
pub mod transverse;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] expr::ExprError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Discretize(#[from] discretize::DiscretizeError),
    #[error(transparent)]
    Eigen(#[from] eigensolve::EigenError),
    #[error(transparent)]
    Transverse(#[from] transverse::TransverseError),
    #[error(transparent)]
    Effective(#[from] effective::EffectiveError),
    #[error(transparent)]
    Surface(#[from] hypersurface::SurfaceError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}
