use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::WindowedFit;
use super::HarnessError;

pub const CSV_HEADER: [&str; 9] = ["regime", "j", "k_or_alpha", "h", "hbar", "predicted", "computed", "error", "disc_budget"];
pub const SURFACE_EXTRA: [&str; 4] = ["m", "alpha", "ell", "theta_min"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceExtra {
    pub m: usize,
    pub alpha: usize,
    pub ell: usize,
    pub theta_min: f64,
}

/// One compared eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub regime: String,
    pub j: usize,
    pub k_or_alpha: usize,
    pub h: f64,
    pub hbar: f64,
    pub predicted: f64,
    pub computed: f64,
    pub error: f64,
    pub disc_budget: f64,
    pub surface: Option<SurfaceExtra>,
}

/// Fitted exponent for one `(regime, j, k)` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub regime: String,
    pub j: usize,
    pub k_or_alpha: usize,
    pub claimed: f64,
    pub threshold: f64,
    pub result: Result<WindowedFit, String>,
    pub pass: bool,
}

/// A named pass/fail check. Informational checks do not affect the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub kind: String,
    pub rows: Vec<Row>,
    pub fits: Vec<SeriesFit>,
    pub checks: Vec<Check>,
    /// Computation error that aborted this experiment.
    pub error: Option<String>,
    pub solve_seconds: f64,
}

impl ExperimentReport {
    pub fn verdict(&self) -> bool {
        self.error.is_none() && self.fits.iter().all(|f| f.pass) && self.checks.iter().all(|c| c.pass || c.informational)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub cache: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub provenance: Provenance,
    pub experiments: Vec<ExperimentReport>,
}

impl SweepReport {
    pub fn verdict(&self) -> bool {
        self.experiments.iter().all(ExperimentReport::verdict)
    }

    pub fn has_errors(&self) -> bool {
        self.experiments.iter().any(|e| e.error.is_some())
    }
}

/// Shortest round-trip text, in exponent form for very small or large magnitudes.
fn fmt_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

/// Writes `rows` as CSV; surface rows carry four extra columns.
pub fn write_csv(path: &Path, rows: &[Row]) -> Result<(), HarnessError> {
    let surface = rows.iter().any(|r| r.surface.is_some());
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if surface {
        header.extend(SURFACE_EXTRA);
    }
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.regime.clone(),
            r.j.to_string(),
            r.k_or_alpha.to_string(),
            fmt_float(r.h),
            fmt_float(r.hbar),
            fmt_float(r.predicted),
            fmt_float(r.computed),
            fmt_float(r.error),
            fmt_float(r.disc_budget),
        ];
        if surface {
            let s = r.surface.unwrap_or(SurfaceExtra { m: 0, alpha: 0, ell: 0, theta_min: f64::NAN });
            rec.extend([s.m.to_string(), s.alpha.to_string(), s.ell.to_string(), fmt_float(s.theta_min)]);
        }
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads rows written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<Row>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    let surface = header.len() == CSV_HEADER.len() + SURFACE_EXTRA.len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| io_err(path, e));
        let u = |i: usize| rec[i].parse::<usize>().map_err(|e| io_err(path, e));
        rows.push(Row {
            regime: rec[0].to_string(),
            j: u(1)?,
            k_or_alpha: u(2)?,
            h: f(3)?,
            hbar: f(4)?,
            predicted: f(5)?,
            computed: f(6)?,
            error: f(7)?,
            disc_budget: f(8)?,
            surface: if surface { Some(SurfaceExtra { m: u(9)?, alpha: u(10)?, ell: u(11)?, theta_min: f(12)? }) } else { None },
        });
    }
    Ok(rows)
}

/// Gnuplot script plotting `|error|` against `h` (or `hbar`) on log-log
/// axes for every series, with a reference line of the claimed slope.
pub fn plot_script(exp: &ExperimentReport, csv_name: &str) -> String {
    let col = if exp.kind == "surface" { 4 } else { 5 };
    let xlabel = if exp.kind == "surface" { "h" } else { "hbar" };
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset logscale xy\nset key left top\n");
    s.push_str(&format!("set xlabel '{xlabel}'\nset ylabel '|computed - predicted|'\nset title '{}'\n", exp.name));
    let mut plots = Vec::new();
    for f in &exp.fits {
        let Ok(w) = &f.result else { continue };
        plots.push(format!(
            "'{csv_name}' every ::1 using (stringcolumn(1) eq '{r}' && $2 == {j} && $3 == {k} ? ${col} : 1/0):(abs($8)) \
             with linespoints title '{r} j={j} k={k} slope {s:.2}'",
            r = f.regime,
            j = f.j,
            k = f.k_or_alpha,
            s = w.fit.slope
        ));
        plots.push(format!(
            "exp({b:.6}) * x**{c} with lines dashtype 2 title 'slope {c}'",
            b = w.fit.intercept,
            c = f.claimed
        ));
    }
    if plots.is_empty() {
        plots.push(format!("'{csv_name}' every ::1 using {col}:(abs($8)) with points title 'rows'"));
    }
    s.push_str("plot ");
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}

/// Writes `<name>.csv` and `<name>.gp` per experiment and `report.json`.
pub fn emit(report: &SweepReport, out: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for exp in &report.experiments {
        let csv_name = format!("{}.csv", exp.name);
        write_csv(&out.join(&csv_name), &exp.rows)?;
        let gp = out.join(format!("{}.gp", exp.name));
        fs::write(&gp, plot_script(exp, &csv_name)).map_err(|e| io_err(&gp, e))?;
    }
    let json = out.join("report.json");
    let mut f = fs::File::create(&json).map_err(|e| io_err(&json, e))?;
    serde_json::to_writer_pretty(&mut f, report).map_err(|e| io_err(&json, e))?;
    f.write_all(b"\n").map_err(|e| io_err(&json, e))
}
