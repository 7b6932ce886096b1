use std::io::{BufRead, Write};

use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use serde::{Deserialize, Serialize};

use super::{DiscretizeError, Grid};
use crate::expr::PotentialExpr;
use crate::model::{ModelSpec, SemiclassicalParams};

pub const DEFAULT_ROW_CAP: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StencilOrder {
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "4")]
    Fourth,
}

impl StencilOrder {
    pub fn from_int(order: u32) -> Option<Self> {
        match order {
            2 => Some(StencilOrder::Second),
            4 => Some(StencilOrder::Fourth),
            _ => None,
        }
    }

    pub fn as_int(self) -> u32 {
        match self {
            StencilOrder::Second => 2,
            StencilOrder::Fourth => 4,
        }
    }

    /// Weights of `-d^2/dt^2` at offsets `0, 1, 2`, times `Δ^2`.
    fn weights(self) -> [f64; 3] {
        match self {
            StencilOrder::Second => [2.0, -1.0, 0.0],
            StencilOrder::Fourth => [30.0 / 12.0, -16.0 / 12.0, 1.0 / 12.0],
        }
    }
}

/// Symmetric sparse matrix in compressed rows with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub grid: Grid,
    pub order: StencilOrder,
}

impl DiscreteOperator {
    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entry(i, i)).collect()
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.entry(j, i)).abs());
            }
        }
        worst
    }

    /// Adds `shift` to every diagonal entry.
    pub fn shifted(&self, shift: f64) -> DiscreteOperator {
        let mut out = self.clone();
        for i in 0..out.dim() {
            for p in out.row_ptr[i]..out.row_ptr[i + 1] {
                if out.col_idx[p] == i {
                    out.values[p] += shift;
                }
            }
        }
        out
    }

    /// Adds a diagonal vector.
    pub fn plus_diagonal(&self, d: &[f64]) -> DiscreteOperator {
        assert_eq!(d.len(), self.dim());
        let mut out = self.clone();
        for (i, di) in d.iter().enumerate() {
            for p in out.row_ptr[i]..out.row_ptr[i + 1] {
                if out.col_idx[p] == i {
                    out.values[p] += di;
                }
            }
        }
        out
    }

    /// `A - sigma I` as a faer column-major sparse matrix. Symmetry makes the
    /// compressed rows a valid compressed-column layout as-is.
    pub fn to_faer(&self, sigma: f64) -> SparseColMat<usize, f64> {
        let n = self.dim();
        let symbolic = SymbolicSparseColMat::new_checked(n, n, self.row_ptr.clone(), None, self.col_idx.clone());
        let mut vals = self.values.clone();
        if sigma != 0.0 {
            for i in 0..n {
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    if self.col_idx[p] == i {
                        vals[p] -= sigma;
                    }
                }
            }
        }
        SparseColMat::new(symbolic, vals)
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        m
    }

    /// Writes the sparse triplet text format: a header line
    /// `rows cols nnz`, then one `row col value` line per stored entry with
    /// 0-based indices and shortest round-trip decimal values.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.dim(), self.dim(), self.nnz())?;
        for i in 0..self.dim() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {c} {v:?}")?;
            }
        }
        Ok(())
    }
}

/// Reads the triplet format back as `(rows, cols, entries)`.
pub fn read_triplets<R: BufRead>(r: R) -> Result<(usize, usize, Vec<(usize, usize, f64)>), DiscretizeError> {
    let bad = |s: String| DiscretizeError::Triplets(s);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("empty input".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let h: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad header `{header}`"))))
        .collect::<Result<_, _>>()?;
    if h.len() != 3 {
        return Err(bad(format!("bad header `{header}`")));
    }
    let mut entries = Vec::with_capacity(h[2]);
    for line in lines {
        let line = line.map_err(|e| bad(e.to_string()))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(bad(format!("bad line `{line}`")));
        }
        let i = t[0].parse().map_err(|_| bad(format!("bad line `{line}`")))?;
        let j = t[1].parse().map_err(|_| bad(format!("bad line `{line}`")))?;
        let v = t[2].parse().map_err(|_| bad(format!("bad line `{line}`")))?;
        entries.push((i, j, v));
    }
    if entries.len() != h[2] {
        return Err(bad(format!("header declares {} entries, found {}", h[2], entries.len())));
    }
    Ok((h[0], h[1], entries))
}

/// Kronecker-sum assembly of `sum_d coeffs[d] * (-d^2/dx_d^2) + diag(potential)`.
pub fn assemble_tensor(
    grid: &Grid,
    coeffs: &[f64],
    order: StencilOrder,
    potential: &[f64],
    row_cap: usize,
) -> Result<DiscreteOperator, DiscretizeError> {
    assert_eq!(coeffs.len(), grid.dim());
    let n = grid.size();
    if n > row_cap {
        return Err(DiscretizeError::Size { rows: n, cap: row_cap });
    }
    assert_eq!(potential.len(), n);
    let w = order.weights();
    let reach = if order == StencilOrder::Fourth { 2 } else { 1 };
    let strides = grid.strides();
    let scaled: Vec<[f64; 3]> = grid
        .axes
        .iter()
        .zip(coeffs)
        .map(|(a, c)| {
            let s = c / (a.spacing() * a.spacing());
            [w[0] * s, w[1] * s, w[2] * s]
        })
        .collect();
    let diag_kinetic: f64 = scaled.iter().map(|s| s[0]).sum();

    let per_row = 1 + 2 * reach * grid.dim();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n * per_row);
    let mut values = Vec::with_capacity(n * per_row);
    row_ptr.push(0);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(per_row);
    for i in 0..n {
        let v = potential[i];
        if !v.is_finite() {
            return Err(DiscretizeError::NonFinite { point: grid.point(i) });
        }
        entries.clear();
        entries.push((i, diag_kinetic + v));
        let multi = grid.unravel(i);
        for (d, axis) in grid.axes.iter().enumerate() {
            let k = multi[d];
            let len = axis.interior();
            for off in 1..=reach {
                let wv = scaled[d][off];
                if k >= off {
                    entries.push((i - off * strides[d], wv));
                }
                if k + off < len {
                    entries.push((i + off * strides[d], wv));
                }
            }
        }
        entries.sort_unstable_by_key(|e| e.0);
        for &(c, v) in &entries {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(DiscreteOperator { row_ptr, col_idx, values, grid: grid.clone(), order })
}

fn sample(grid: &Grid, v: &PotentialExpr) -> Result<Vec<f64>, DiscretizeError> {
    (0..grid.size()).map(|i| Ok(v.eval(&grid.point(i))?)).collect()
}

/// `-c d^2/dt^2 + V` on a 1D grid.
pub fn assemble_1d(v: &PotentialExpr, grid: &Grid, c: f64, order: StencilOrder) -> Result<DiscreteOperator, DiscretizeError> {
    if grid.dim() != 1 {
        return Err(DiscretizeError::InvalidGrid(format!("expected a 1D grid, got {} axes", grid.dim())));
    }
    let pot = sample(grid, v)?;
    assemble_tensor(grid, &[c], order, &pot, DEFAULT_ROW_CAP)
}

/// `hbar^2 D_x^2 + D_y^2 + f(x) g(y)`; the grid lists the `n` longitudinal
/// axes first and the transverse axis last.
pub fn assemble_fibered(
    model: &ModelSpec,
    params: &SemiclassicalParams,
    grid: &Grid,
    order: StencilOrder,
    row_cap: usize,
) -> Result<DiscreteOperator, DiscretizeError> {
    if grid.dim() != model.n + 1 {
        return Err(DiscretizeError::InvalidGrid(format!(
            "expected {} axes for the fibered operator, got {}",
            model.n + 1,
            grid.dim()
        )));
    }
    if grid.size() > row_cap {
        return Err(DiscretizeError::Size { rows: grid.size(), cap: row_cap });
    }
    let ny = grid.axes[model.n].interior();
    let g_vals: Vec<f64> = grid.axes[model.n]
        .interior_nodes()
        .into_iter()
        .map(|y| model.g_at(y))
        .collect::<Result<_, _>>()?;
    let x_grid = Grid { axes: grid.axes[..model.n].to_vec() };
    let f_vals: Vec<f64> = (0..x_grid.size()).map(|i| model.f_at(&x_grid.point(i))).collect::<Result<_, _>>()?;
    let mut pot = Vec::with_capacity(grid.size());
    for fx in &f_vals {
        for gy in &g_vals {
            pot.push(fx * gy);
        }
    }
    debug_assert_eq!(pot.len(), x_grid.size() * ny);
    let mut coeffs = vec![params.hbar * params.hbar; model.n];
    coeffs.push(1.0);
    assemble_tensor(grid, &coeffs, order, &pot, row_cap)
}

/// `-h^2 Δ + V` on a 2D grid.
pub fn assemble_ambient(
    v: &PotentialExpr,
    h: f64,
    grid: &Grid,
    order: StencilOrder,
    row_cap: usize,
) -> Result<DiscreteOperator, DiscretizeError> {
    if grid.dim() != 2 {
        return Err(DiscretizeError::InvalidGrid(format!("expected a 2D grid, got {} axes", grid.dim())));
    }
    if grid.size() > row_cap {
        return Err(DiscretizeError::Size { rows: grid.size(), cap: row_cap });
    }
    let pot = sample(grid, v)?;
    assemble_tensor(grid, &[h * h, h * h], order, &pot, row_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Axis;
    use crate::expr::parse;
    use crate::model::{hbar_of_h, validate_model, RawModel};

    #[test]
    fn one_dimensional_stencils() {
        let g = Grid::line(1.0, 21).unwrap();
        let v = parse("t^2", &["t"]).unwrap();
        let a2 = assemble_1d(&v, &g, 1.0, StencilOrder::Second).unwrap();
        let d = g.axes[0].spacing();
        assert_eq!(a2.dim(), 19);
        assert!((a2.entry(5, 5) - (2.0 / (d * d) + g.axes[0].interior_node(5).powi(2))).abs() < 1e-12);
        assert_eq!(a2.entry(5, 6), -1.0 / (d * d));
        assert_eq!(a2.entry(5, 7), 0.0);
        let a4 = assemble_1d(&v, &g, 2.0, StencilOrder::Fourth).unwrap();
        assert!((a4.entry(5, 7) - 2.0 / (12.0 * d * d)).abs() < 1e-12);
        assert!((a4.entry(5, 6) + 2.0 * 16.0 / (12.0 * d * d)).abs() < 1e-9);
        assert_eq!(a4.row(0).0, &[0, 1, 2]);
        assert_eq!(a4.asymmetry(), 0.0);
    }

    #[test]
    fn fibered_is_a_kronecker_sum() {
        let model = validate_model(&RawModel::new(1, 2.0, "1 + x^2", "y^2", f64::INFINITY)).unwrap();
        let p = hbar_of_h(0.01, 2.0);
        let grid = Grid::new(vec![Axis::new(3.0, 21).unwrap(), Axis::new(4.0, 25).unwrap()]).unwrap();
        let op = assemble_fibered(&model, &p, &grid, StencilOrder::Fourth, DEFAULT_ROW_CAP).unwrap();
        assert_eq!(op.asymmetry(), 0.0);
        let gx = Grid { axes: vec![grid.axes[0]] };
        let gy = Grid { axes: vec![grid.axes[1]] };
        let zero = parse("0", &["t"]).unwrap();
        let tx = assemble_1d(&zero, &gx, 1.0, StencilOrder::Fourth).unwrap();
        let ty = assemble_1d(&zero, &gy, 1.0, StencilOrder::Fourth).unwrap();
        let (nx, ny) = (gx.size(), gy.size());
        for i in 0..nx {
            for k in 0..ny {
                let r = i * ny + k;
                for j in 0..nx {
                    for l in 0..ny {
                        let c = j * ny + l;
                        let mut expect = 0.0;
                        if k == l {
                            expect += p.hbar * p.hbar * tx.entry(i, j);
                        }
                        if i == j {
                            expect += ty.entry(k, l);
                        }
                        if r == c {
                            let x = gx.axes[0].interior_node(i);
                            let y = gy.axes[0].interior_node(k);
                            expect += (1.0 + x * x) * y * y;
                        }
                        assert!((op.entry(r, c) - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn size_cap_is_enforced() {
        let grid = Grid::new(vec![Axis::new(1.0, 101).unwrap(), Axis::new(1.0, 101).unwrap()]).unwrap();
        let v = parse("x^2 + y^2", &["x", "y"]).unwrap();
        assert!(matches!(
            assemble_ambient(&v, 1.0, &grid, StencilOrder::Second, 1000),
            Err(DiscretizeError::Size { rows: 9801, cap: 1000 })
        ));
    }

    #[test]
    fn triplets_round_trip() {
        let g = Grid::line(2.0, 17).unwrap();
        let v = parse("exp(t)", &["t"]).unwrap();
        let op = assemble_1d(&v, &g, 0.3, StencilOrder::Fourth).unwrap();
        let mut buf = Vec::new();
        op.write_triplets(&mut buf).unwrap();
        let (r, c, e) = read_triplets(&buf[..]).unwrap();
        assert_eq!((r, c, e.len()), (op.dim(), op.dim(), op.nnz()));
        for (i, j, val) in e {
            assert_eq!(op.entry(i, j), val);
        }
    }

    #[test]
    fn non_finite_potential_is_rejected() {
        let g = Grid::line(1.0, 17).unwrap();
        let v = parse("1/(t - 0.125 + 0.125)", &["t"]).unwrap();
        assert!(assemble_1d(&v, &g, 1.0, StencilOrder::Second).is_err());
    }
}
