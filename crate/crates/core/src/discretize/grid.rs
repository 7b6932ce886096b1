use serde::{Deserialize, Serialize};

use super::DiscretizeError;

/// One uniform axis on `[-half_extent, half_extent]` with `points` nodes,
/// endpoints included. The Dirichlet walls sit on the endpoints, so only the
/// `points - 2` interior nodes carry unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub half_extent: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(half_extent: f64, points: usize) -> Result<Self, DiscretizeError> {
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(DiscretizeError::InvalidGrid(format!("half-extent {half_extent} is not positive")));
        }
        if points < 17 || points % 2 == 0 {
            return Err(DiscretizeError::InvalidGrid(format!("point count {points} must be odd and at least 17")));
        }
        Ok(Self { half_extent, points })
    }

    /// Smallest odd-count axis covering `[-half_extent, half_extent]` with
    /// spacing exactly `spacing`; the extent is rounded up to fit.
    pub fn with_spacing(half_extent: f64, spacing: f64) -> Result<Self, DiscretizeError> {
        if !(spacing > 0.0) {
            return Err(DiscretizeError::InvalidGrid(format!("spacing {spacing} is not positive")));
        }
        let half_cells = (half_extent / spacing - 1e-9).ceil().max(8.0) as usize;
        Axis::new(half_cells as f64 * spacing, 2 * half_cells + 1)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / (self.points - 1) as f64
    }

    /// Coordinate of node `i` (0-based, including the wall nodes).
    pub fn node(&self, i: usize) -> f64 {
        let c = (self.points / 2) as isize;
        (i as isize - c) as f64 * self.spacing()
    }

    /// Number of unknowns along this axis.
    pub fn interior(&self) -> usize {
        self.points - 2
    }

    /// Coordinate of interior unknown `k`.
    pub fn interior_node(&self, k: usize) -> f64 {
        self.node(k + 1)
    }

    pub fn interior_nodes(&self) -> Vec<f64> {
        (0..self.interior()).map(|k| self.interior_node(k)).collect()
    }

    /// Same extent, spacing halved (`2N - 1` points).
    pub fn refined(&self) -> Axis {
        Axis { half_extent: self.half_extent, points: 2 * self.points - 1 }
    }
}

/// Tensor product of axes; unknowns are ordered row-major with the last
/// axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, DiscretizeError> {
        if axes.is_empty() {
            return Err(DiscretizeError::InvalidGrid("a grid needs at least one axis".into()));
        }
        for a in &axes {
            Axis::new(a.half_extent, a.points)?;
        }
        Ok(Self { axes })
    }

    pub fn line(half_extent: f64, points: usize) -> Result<Self, DiscretizeError> {
        Grid::new(vec![Axis::new(half_extent, points)?])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|a| a.interior()).product()
    }

    /// Row-major strides of the unknown ordering.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for d in (0..self.axes.len().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.axes[d + 1].interior();
        }
        s
    }

    /// Multi-index of unknown `idx`.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            let n = self.axes[d].interior();
            out[d] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .into_iter()
            .zip(&self.axes)
            .map(|(k, a)| a.interior_node(k))
            .collect()
    }

    pub fn refined(&self) -> Grid {
        Grid { axes: self.axes.iter().map(Axis::refined).collect() }
    }

    /// Quadrature weight of one cell (product of spacings).
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }
}
