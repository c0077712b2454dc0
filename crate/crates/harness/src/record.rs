//! Versioned CSV layouts.

use std::fmt::Write as _;

use resav_core::integrators::StepReport;

use crate::config::RunConfig;

pub const RUN_VERSION: &str = "resav-record v1";
pub const COMPARE_VERSION: &str = "resav-compare v1";
pub const CONVERGE_VERSION: &str = "resav-converge v1";

/// Column order of run records.
pub const COLUMNS: [&str; 11] = [
    "t",
    "E_original",
    "E_modified",
    "log_r",
    "log_r2",
    "xi",
    "theta0",
    "gamma",
    "dissipation",
    "mass",
    "divergence_max",
];

pub fn row_values(r: &StepReport<f64>) -> [f64; 11] {
    [
        r.t,
        r.e_original,
        r.e_modified,
        r.log_r,
        r.log_r2,
        r.xi,
        r.theta0,
        r.gamma,
        r.dissipation,
        r.mass,
        r.divergence_max,
    ]
}

/// `scheme` or `scheme:unrelaxed`.
pub fn run_label(cfg: &RunConfig) -> String {
    if cfg.relaxed {
        cfg.scheme.to_string()
    } else {
        format!("{}:unrelaxed", cfg.scheme)
    }
}

fn describe(cfg: &RunConfig) -> String {
    let join = |v: &[String]| v.join("x");
    format!(
        "model={} scheme={} relaxed={} n={} length={} dt={} T={} gamma={} dealias={} seed={}",
        cfg.model.name(),
        cfg.scheme,
        cfg.relaxed,
        join(&cfg.extents.iter().map(|n| n.to_string()).collect::<Vec<_>>()),
        join(&cfg.lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>()),
        cfg.dt,
        cfg.t_final,
        cfg.gamma,
        cfg.dealias,
        cfg.seed,
    )
}

fn push_row(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

pub fn run_csv(cfg: &RunConfig, scale: f64, rows: &[StepReport<f64>]) -> String {
    let mut out = format!("# {RUN_VERSION} {} scale_c={scale}\n", describe(cfg));
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for r in rows {
        push_row(&mut out, &row_values(r));
    }
    out
}

/// Rows side by side: `t` once, then the other columns of each run. A second
/// header line names the run owning each column.
pub fn compare_csv(runs: &[(&RunConfig, &[StepReport<f64>])]) -> String {
    let (first, _) = runs[0];
    let mut out = format!(
        "# {COMPARE_VERSION} model={} dt={} T={} runs={}\n",
        first.model.name(),
        first.dt,
        first.t_final,
        runs.len()
    );
    let mut names = vec!["scheme".to_string()];
    let mut cols = vec![COLUMNS[0].to_string()];
    for (cfg, _) in runs {
        let label = run_label(cfg);
        names.extend(std::iter::repeat_n(label, COLUMNS.len() - 1));
        cols.extend(COLUMNS[1..].iter().map(|c| c.to_string()));
    }
    out.push_str(&names.join(","));
    out.push('\n');
    out.push_str(&cols.join(","));
    out.push('\n');
    let n_rows = runs.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    for i in 0..n_rows {
        let mut values = vec![runs[0].1[i].t];
        for (_, rows) in runs {
            values.extend_from_slice(&row_values(&rows[i])[1..]);
        }
        push_row(&mut out, &values);
    }
    out
}

/// One row of a convergence table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub error: f64,
    /// `ln(e_prev / e) / ln(dt_prev / dt)`; absent for the first row.
    pub rate: Option<f64>,
}

/// Observed orders between consecutive entries of `(dt, error)` pairs,
/// ordered by decreasing `dt`.
pub fn convergence_rows(mut errors: Vec<(f64, f64)>) -> Vec<ConvergenceRow> {
    errors.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(errors.len());
    for (i, &(dt, error)) in errors.iter().enumerate() {
        let rate = (i > 0).then(|| {
            let (dt0, e0) = errors[i - 1];
            (e0 / error).ln() / (dt0 / dt).ln()
        });
        rows.push(ConvergenceRow { dt, error, rate });
    }
    rows
}

pub fn converge_csv(cfg: &RunConfig, reference: &str, rows: &[ConvergenceRow]) -> String {
    let mut out = format!("# {CONVERGE_VERSION} {} reference={reference}\n", describe(cfg));
    out.push_str("dt,error,rate\n");
    for r in rows {
        match r.rate {
            Some(p) => writeln!(out, "{},{},{}", r.dt, r.error, p).unwrap(),
            None => writeln!(out, "{},{},", r.dt, r.error).unwrap(),
        }
    }
    out
}
