use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least 3 points, got {0}")]
    InsufficientPoints(usize),
    #[error("error values must be positive; got {value} at {param}")]
    NonPositiveError { param: f64, value: f64 },
    #[error("signed errors change sign across the sweep (predicted crossing between {0} and {1})")]
    MixedSign(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log line.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares line through `(log h, log err)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::InsufficientPoints(points.len()));
    }
    if let Some(&(param, value)) = points.iter().find(|p| !(p.1 > 0.0) || !(p.0 > 0.0)) {
        return Err(FitError::NonPositiveError { param, value });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|(h, e)| (h.ln(), e.ln())).collect();
    let (slope, intercept) = least_squares(&xy);
    let ss: f64 = xy.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(SlopeFit { slope, intercept, residual: (ss / xy.len() as f64).sqrt(), points: xy.len() })
}

/// Ordinary least-squares `y = intercept + slope * x`; returns `(slope, intercept)`.
pub fn least_squares(xy: &[(f64, f64)]) -> (f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fit of signed errors: fails on a sign change, drops exact zeros, and
/// keeps only points whose budget is at most 10% of the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedFit {
    pub fit: SlopeFit,
    pub excluded: Vec<f64>,
    pub note: Option<String>,
}

pub fn fit_signed(points: &[(f64, f64, f64)]) -> Result<WindowedFit, FitError> {
    let mut sorted: Vec<(f64, f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let nonzero: Vec<&(f64, f64, f64)> = sorted.iter().filter(|p| p.1 != 0.0).collect();
    for w in nonzero.windows(2) {
        if w[0].1.signum() != w[1].1.signum() {
            return Err(FitError::MixedSign(w[0].0, w[1].0));
        }
    }
    let mut notes = Vec::new();
    if nonzero.len() < sorted.len() {
        notes.push(format!("{} exact-zero error(s) excluded", sorted.len() - nonzero.len()));
    }
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for p in nonzero {
        if p.2 <= 0.1 * p.1.abs() {
            kept.push((p.0, p.1.abs()));
        } else {
            excluded.push(p.0);
        }
    }
    if !excluded.is_empty() {
        notes.push(format!("under-resolved points excluded at {excluded:?}"));
    }
    let fit = fit_slope(&kept)?;
    Ok(WindowedFit { fit, excluded, note: if notes.is_empty() { None } else { Some(notes.join("; ")) } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_power_laws() {
        let f = fit_slope(&[(0.1, 0.01), (0.05, 0.0025), (0.025, 0.000625)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.02].iter().map(|&h: &f64| (h, 3.0 * h.powf(1.5))).collect();
        let f = fit_slope(&pts).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<(f64, f64)> = (0..7)
            .map(|i| {
                let h = 0.2 * 0.7f64.powi(i) * (1.0 + 0.01 * rng.gen_range(-1.0..1.0));
                (h, h * h * (1.0 + 0.05 * (1.0 / h).sin()))
            })
            .collect();
        let f = fit_slope(&pts).unwrap();
        assert!((1.9..=2.1).contains(&f.slope), "{}", f.slope);
    }

    #[test]
    fn rejections() {
        assert!(matches!(fit_slope(&[(0.1, 1.0), (0.2, 2.0)]), Err(FitError::InsufficientPoints(2))));
        assert!(matches!(fit_slope(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)]), Err(FitError::NonPositiveError { .. })));
        let mixed = [(0.2, 1e-2, 0.0), (0.1, -1e-3, 0.0), (0.05, 1e-4, 0.0)];
        assert!(matches!(fit_signed(&mixed), Err(FitError::MixedSign(_, _))));
    }

    #[test]
    fn budget_window() {
        let pts = [(0.2, -4e-2, 1e-6), (0.1, -1e-2, 1e-6), (0.05, -2.5e-3, 1e-6), (0.025, -6.25e-4, 1e-4)];
        let w = fit_signed(&pts).unwrap();
        assert_eq!(w.excluded, vec![0.025]);
        assert!((w.fit.slope - 2.0).abs() < 1e-12);
        assert!(w.note.unwrap().contains("under-resolved"));
        let zero = [(0.2, 4e-2, 0.0), (0.1, 1e-2, 0.0), (0.05, 0.0, 0.0), (0.04, 1.6e-3, 0.0)];
        assert!(fit_signed(&zero).unwrap().note.unwrap().contains("exact-zero"));
    }
}
