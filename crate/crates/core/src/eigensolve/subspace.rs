use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fix_sign, krylov::pcg, residual, EigenError, EigenResult, SolverMeta};
use crate::discretize::DiscreteOperator;

/// Which part of the spectrum the solver reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// The `k` lowest eigenvalues; the shift must lie below them.
    Lowest,
    /// The `k` eigenvalues closest to the shift.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InnerSolver {
    /// Sparse Cholesky of `A - σI`, or LU when that is not positive definite.
    Direct,
    /// Jacobi-preconditioned conjugate gradients; needs `σ` below the spectrum.
    Pcg { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterOptions {
    pub tol: f64,
    pub seed: u64,
    pub shift: f64,
    pub target: Target,
    pub max_iter: usize,
    pub guard: usize,
    pub inner: InnerSolver,
    pub keep_vectors: bool,
    /// Extra iterations run after the tolerance is first met.
    pub polish: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            seed: 0x5eed,
            shift: 0.0,
            target: Target::Lowest,
            max_iter: 500,
            guard: 4,
            inner: InnerSolver::Direct,
            keep_vectors: true,
            polish: 0,
        }
    }
}

enum Factor {
    Llt(faer::sparse::linalg::solvers::Llt<usize, f64>),
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Pcg { inv_diag: Vec<f64>, tol: f64, max_iter: usize },
}

fn factor(op: &DiscreteOperator, sigma: f64, inner: InnerSolver) -> Result<(Factor, &'static str), EigenError> {
    match inner {
        InnerSolver::Pcg { tol, max_iter } => {
            let d = op.diagonal();
            if d.iter().any(|x| x - sigma <= 0.0) {
                return Err(EigenError::SingularShift("PCG needs a positive diagonal after the shift".into()));
            }
            Ok((Factor::Pcg { inv_diag: d.iter().map(|x| 1.0 / (x - sigma)).collect(), tol, max_iter }, "pcg"))
        }
        InnerSolver::Direct => {
            let a = op.to_faer(sigma);
            if let Ok(llt) = a.sp_cholesky(Side::Lower) {
                return Ok((Factor::Llt(llt), "llt"));
            }
            let lu = a.sp_lu().map_err(|e| EigenError::SingularShift(format!("{e:?}")))?;
            Ok((Factor::Lu(lu), "lu"))
        }
    }
}

fn solve_block(f: &Factor, op: &DiscreteOperator, sigma: f64, x: &Mat<f64>) -> Result<Mat<f64>, EigenError> {
    let mut y = x.clone();
    match f {
        Factor::Llt(llt) => llt.solve_in_place(y.as_mut()),
        Factor::Lu(lu) => lu.solve_in_place(y.as_mut()),
        Factor::Pcg { inv_diag, tol, max_iter } => {
            let apply = |v: &[f64], out: &mut [f64]| {
                op.apply(v, out);
                for (o, vi) in out.iter_mut().zip(v) {
                    *o -= sigma * vi;
                }
            };
            let cols: Vec<Vec<f64>> = (0..x.ncols())
                .into_par_iter()
                .map(|j| {
                    let out = pcg(apply, inv_diag, x.col_as_slice(j), None, *tol, *max_iter);
                    if out.converged {
                        Ok(out.x)
                    } else {
                        Err(EigenError::NoConvergence { iterations: out.iterations, best_residual: out.relative_residual })
                    }
                })
                .collect::<Result<_, _>>()?;
            for (j, c) in cols.into_iter().enumerate() {
                y.col_as_slice_mut(j).copy_from_slice(&c);
            }
        }
    }
    if (0..y.ncols()).any(|j| y.col_as_slice(j).iter().any(|v| !v.is_finite())) {
        return Err(EigenError::SingularShift(format!("solve with shift {sigma} produced non-finite values")));
    }
    Ok(y)
}

fn apply_block(op: &DiscreteOperator, q: &Mat<f64>) -> Mat<f64> {
    let cols: Vec<Vec<f64>> = (0..q.ncols())
        .into_par_iter()
        .map(|j| {
            let mut out = vec![0.0; q.nrows()];
            op.apply(q.col_as_slice(j), &mut out);
            out
        })
        .collect();
    let mut m = Mat::zeros(q.nrows(), q.ncols());
    for (j, c) in cols.into_iter().enumerate() {
        m.col_as_slice_mut(j).copy_from_slice(&c);
    }
    m
}

fn orthonormalize(y: &Mat<f64>) -> Mat<f64> {
    y.qr().compute_thin_Q()
}

/// Shift-invert subspace iteration with Rayleigh-Ritz extraction.
///
/// Converged when every wanted pair has `||A x - θ x|| <= tol * max(1, |θ|)`.
///
/// The start block is drawn from a ChaCha generator seeded with
/// `opts.seed`, so repeated calls on one platform are bit-identical.
pub fn iterative_lowest(op: &DiscreteOperator, k: usize, opts: &IterOptions) -> Result<EigenResult, EigenError> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(EigenError::TooMany { requested: k, dim: n });
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let b = (k + opts.guard).min(n);
    let sigma = opts.shift;
    let (fac, method) = factor(op, sigma, opts.inner)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = Mat::from_fn(n, b, |_, _| rng.gen_range(-1.0..1.0));
    let mut x = orthonormalize(&start);

    let mut best = f64::INFINITY;
    let mut met_at = None;
    for it in 1..=opts.max_iter {
        let y = solve_block(&fac, op, sigma, &x)?;
        let q = orthonormalize(&y);
        let aq = apply_block(op, &q);
        let h = q.transpose() * &aq;
        let hs = Mat::from_fn(b, b, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
        let evd = hs.self_adjoint_eigen(Side::Lower).map_err(|e| EigenError::Dense(format!("{e:?}")))?;
        let theta: Vec<f64> = (0..b).map(|i| evd.S().column_vector()[i]).collect();
        let u = evd.U().to_owned();
        x = &q * &u;
        let ax = &aq * &u;

        let mut wanted: Vec<usize> = (0..b).collect();
        if opts.target == Target::Nearest {
            wanted.sort_by(|&i, &j| (theta[i] - sigma).abs().total_cmp(&(theta[j] - sigma).abs()).then(i.cmp(&j)));
        }
        wanted.truncate(k);
        wanted.sort_unstable();

        let res: Vec<f64> = wanted
            .iter()
            .map(|&i| {
                let xi = x.col_as_slice(i);
                let axi = ax.col_as_slice(i);
                xi.iter().zip(axi).map(|(v, av)| (av - theta[i] * v).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        let worst = wanted
            .iter()
            .zip(&res)
            .map(|(&i, r)| r / theta[i].abs().max(1.0))
            .fold(0.0, f64::max);
        best = best.min(worst);
        if worst <= opts.tol && met_at.is_none() {
            met_at = Some(it);
        }
        if met_at.is_some_and(|m| it >= m + opts.polish) {
            let mut vecs: Vec<Vec<f64>> = wanted.iter().map(|&i| x.col_as_slice(i).to_vec()).collect();
            for v in vecs.iter_mut() {
                fix_sign(v);
            }
            let eigenvalues: Vec<f64> = wanted.iter().map(|&i| theta[i]).collect();
            let residuals = eigenvalues.iter().zip(&vecs).map(|(&l, v)| residual(op, l, v)).collect();
            return Ok(EigenResult {
                eigenvalues,
                residuals,
                vectors: if opts.keep_vectors { Some(vecs) } else { None },
                meta: SolverMeta {
                    method: format!("subspace-{method}"),
                    iterations: it,
                    seed: opts.seed,
                    tol: opts.tol,
                    shift: sigma,
                    block: b,
                },
            });
        }
    }
    Err(EigenError::NoConvergence { iterations: opts.max_iter, best_residual: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_1d, assemble_ambient, Axis, Grid, StencilOrder, DEFAULT_ROW_CAP};
    use crate::eigensolve::dense_lowest;
    use crate::expr::parse;

    fn quartic(points: usize) -> DiscreteOperator {
        let g = Grid::line(5.0, points).unwrap();
        assemble_1d(&parse("t^4", &["t"]).unwrap(), &g, 1.0, StencilOrder::Fourth).unwrap()
    }

    #[test]
    fn matches_dense_oracle() {
        let op = quartic(801);
        let d = dense_lowest(&op, 6).unwrap();
        let it = iterative_lowest(&op, 6, &IterOptions::default()).unwrap();
        for (a, b) in d.eigenvalues.iter().zip(&it.eigenvalues) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(it.residuals.iter().zip(&it.eigenvalues).all(|(&r, l)| r <= 1e-8 * l.max(1.0)));
    }

    #[test]
    fn pcg_inner_solver_agrees() {
        let op = quartic(401);
        let direct = iterative_lowest(&op, 4, &IterOptions::default()).unwrap();
        let opts = IterOptions { inner: InnerSolver::Pcg { tol: 1e-13, max_iter: 20000 }, ..Default::default() };
        let p = iterative_lowest(&op, 4, &opts).unwrap();
        for (a, b) in direct.eigenvalues.iter().zip(&p.eigenvalues) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_target_finds_interior_levels() {
        let g = Grid::line(10.0, 1001).unwrap();
        let op = assemble_1d(&parse("t^2", &["t"]).unwrap(), &g, 1.0, StencilOrder::Fourth).unwrap();
        let opts = IterOptions { shift: 9.2, target: Target::Nearest, ..Default::default() };
        let r = iterative_lowest(&op, 2, &opts).unwrap();
        assert!((r.eigenvalues[0] - 9.0).abs() < 1e-6);
        assert!((r.eigenvalues[1] - 11.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let g = Grid::new(vec![Axis::new(4.0, 61).unwrap(), Axis::new(4.0, 61).unwrap()]).unwrap();
        let v = parse("x^2 + y^2", &["x", "y"]).unwrap();
        let op = assemble_ambient(&v, 1.0, &g, StencilOrder::Fourth, DEFAULT_ROW_CAP).unwrap();
        let a = iterative_lowest(&op, 5, &IterOptions::default()).unwrap();
        let b = iterative_lowest(&op, 5, &IterOptions::default()).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn residuals_are_honest() {
        let op = quartic(301);
        let r = iterative_lowest(&op, 3, &IterOptions::default()).unwrap();
        let vecs = r.vectors.as_ref().unwrap();
        for ((&l, v), &res) in r.eigenvalues.iter().zip(vecs).zip(&r.residuals) {
            assert!((residual(&op, l, v) - res).abs() <= 1e-12);
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-10);
            }
        }
    }
}
