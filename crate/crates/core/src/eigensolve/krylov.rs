/// Result of a Krylov solve.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||` as tracked by the recurrence.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator with a diagonal (Jacobi) preconditioner `inv_diag`.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    inv_diag: &[f64],
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return KrylovOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm(&r) / bnorm;
    let mut it = 0;
    while rel > tol && it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm(&r) / bnorm;
        it += 1;
    }
    KrylovOutcome { x, iterations: it, relative_residual: rel, converged: rel <= tol }
}

/// MINRES for symmetric, possibly indefinite or singular but consistent
/// systems. Started from zero, it returns the solution orthogonal to the
/// null space.
pub fn minres(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], tol: f64, max_iter: usize) -> KrylovOutcome {
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta1 = norm(b);
    if beta1 == 0.0 {
        return KrylovOutcome { x, iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut v_old = vec![0.0; n];
    let mut v: Vec<f64> = b.iter().map(|x| x / beta1).collect();
    let mut w_old = vec![0.0; n];
    let mut w_older = vec![0.0; n];
    let mut av = vec![0.0; n];
    let mut beta = beta1;
    let (mut c_old, mut s_old) = (1.0, 0.0);
    let (mut c_older, mut s_older) = (1.0, 0.0);
    let mut eta = beta1;
    let mut rel = 1.0;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        apply(&v, &mut av);
        let alpha = dot(&v, &av);
        let mut v_new: Vec<f64> = (0..n).map(|i| av[i] - alpha * v[i] - beta * v_old[i]).collect();
        let beta_new = norm(&v_new);
        // Apply the two previous rotations to the new tridiagonal column.
        let eps = s_older * beta;
        let delta_bar = c_older * beta;
        let delta = c_old * delta_bar + s_old * alpha;
        let gamma_bar = -s_old * delta_bar + c_old * alpha;
        let gamma = gamma_bar.hypot(beta_new);
        if gamma == 0.0 {
            break;
        }
        let c = gamma_bar / gamma;
        let s = beta_new / gamma;
        let w: Vec<f64> = (0..n).map(|i| (v[i] - delta * w_old[i] - eps * w_older[i]) / gamma).collect();
        for i in 0..n {
            x[i] += c * eta * w[i];
        }
        eta *= -s;
        rel = eta.abs() / beta1;
        w_older = std::mem::replace(&mut w_old, w);
        c_older = c_old;
        s_older = s_old;
        c_old = c;
        s_old = s;
        if rel <= tol || beta_new == 0.0 {
            break;
        }
        for x in v_new.iter_mut() {
            *x /= beta_new;
        }
        v_old = std::mem::replace(&mut v, v_new);
        beta = beta_new;
    }
    KrylovOutcome { x, iterations: it, relative_residual: rel, converged: rel <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(diag: Vec<f64>) -> impl Fn(&[f64], &mut [f64]) {
        move |x: &[f64], y: &mut [f64]| {
            let n = x.len();
            for i in 0..n {
                let mut s = diag[i] * x[i];
                if i > 0 {
                    s -= x[i - 1];
                }
                if i + 1 < n {
                    s -= x[i + 1];
                }
                y[i] = s;
            }
        }
    }

    #[test]
    fn pcg_solves_spd_system() {
        let n = 200;
        let diag: Vec<f64> = (0..n).map(|i| 3.0 + (i as f64 * 0.1).sin()).collect();
        let inv: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
        let a = tridiag(diag);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let out = pcg(&a, &inv, &b, None, 1e-12, 1000);
        assert!(out.converged);
        let mut ax = vec![0.0; n];
        a(&out.x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-10);
    }

    #[test]
    fn minres_solves_indefinite_system() {
        let n = 150;
        let diag: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { -4.0 } else { 3.5 }).collect();
        let a = tridiag(diag);
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.3).sin()).collect();
        let out = minres(&a, &b, 1e-12, 5000);
        assert!(out.converged, "{out:?}");
        let mut ax = vec![0.0; n];
        a(&out.x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-9 * norm(&b), "{err}");
    }
}
