//! Finite-difference discretizations of `-c Δ + V` on truncated uniform
//! tensor grids with Dirichlet walls.

mod extent;
mod grid;
mod operator;

use thiserror::Error;

use crate::expr::ExprError;

pub use extent::{agmon_reach, choose_extent, transverse_extent, ExtentLimits, WALL_AMPLITUDE};
pub use grid::{Axis, Grid};
pub use operator::{
    assemble_1d, assemble_ambient, assemble_fibered, assemble_tensor, read_triplets, DiscreteOperator, StencilOrder,
    DEFAULT_ROW_CAP,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscretizeError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("operator would have {rows} rows, above the cap of {cap}")]
    Size { rows: usize, cap: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("axis {axis} needs half-extent {required:.3}, above the cap {cap}")]
    ExtentOverflow { axis: usize, required: f64, cap: f64 },
    #[error("potential is not finite at {point:?}")]
    NonFinite { point: Vec<f64> },
    #[error("malformed triplet file: {0}")]
    Triplets(String),
}

/// Two-grid Richardson extrapolation for a quantity with error `O(Δ^order)`
/// when the fine grid halves the spacing. Returns the extrapolated value and
/// the magnitude of the applied correction, used as the discretization budget.
pub fn richardson(coarse: f64, fine: f64, order: u32) -> (f64, f64) {
    let denom = (1u64 << order) as f64 - 1.0;
    let corr = (fine - coarse) / denom;
    (fine + corr, corr.abs())
}
