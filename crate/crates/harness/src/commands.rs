//! The `run`, `converge` and `compare` subcommands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{Reference, RunConfig};
use crate::experiment::{exact_solution, execute, l2_error, RunOutcome};
use crate::record::{compare_csv, converge_csv, convergence_rows, run_csv, run_label, ConvergenceRow};
use crate::HarnessError;

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Printed at the end of `run`.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub label: String,
    pub steps: usize,
    pub e_original: f64,
    pub e_modified: f64,
    pub min_theta0: f64,
    pub csv: PathBuf,
    pub outcome: RunOutcome,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {} steps", self.label, self.steps)?;
        writeln!(f, "  final E_original = {}", self.e_original)?;
        writeln!(f, "  final E_modified = {}", self.e_modified)?;
        writeln!(f, "  min theta0       = {}", self.min_theta0)?;
        write!(f, "  record           = {}", self.csv.display())?;
        if !self.outcome.snapshots.is_empty() {
            write!(f, "\n  snapshots        = {}", self.outcome.snapshots.len())?;
        }
        Ok(())
    }
}

/// Runs one configuration, writing `energy.csv` and any snapshots to the
/// output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
    let outcome = execute(cfg, true)?;
    let csv = cfg.output.join("energy.csv");
    write_file(&csv, &run_csv(cfg, outcome.scale, &outcome.record.rows))?;
    let rows = &outcome.record.rows;
    let last = rows.last().expect("a record has at least the initial row");
    // the initial row carries no relaxation step
    let min_theta0 = rows[1..].iter().map(|r| r.theta0).fold(f64::INFINITY, f64::min);
    Ok(RunSummary {
        label: run_label(cfg),
        steps: rows.len() - 1,
        e_original: last.e_original,
        e_modified: last.e_modified,
        min_theta0: if min_theta0.is_finite() { min_theta0 } else { last.theta0 },
        csv,
        outcome: outcome.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct ConvergeOutcome {
    pub rows: Vec<ConvergenceRow>,
    pub csv: PathBuf,
}

impl fmt::Display for ConvergeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>14} {:>14} {:>8}", "dt", "error", "rate")?;
        for r in &self.rows {
            let rate = r.rate.map(|p| format!("{p:.3}")).unwrap_or_default();
            writeln!(f, "{:>14.6e} {:>14.6e} {rate:>8}", r.dt, r.error)?;
        }
        write!(f, "table: {}", self.csv.display())
    }
}

/// Errors at `T` for every `dt` in `dt_list` (or the single `dt`), measured
/// against the exact solution or against the same scheme at `dt_min / 8`.
pub fn cmd_converge(cfg: &RunConfig) -> Result<ConvergeOutcome, HarnessError> {
    let dts = if cfg.dt_list.is_empty() { vec![cfg.dt] } else { cfg.dt_list.clone() };
    let with_dt = |dt: f64| RunConfig { dt, ..cfg.clone() };
    let reference = match cfg.reference {
        Reference::Exact => exact_solution(cfg, cfg.t_final)?,
        Reference::Fine => {
            let dt_min = dts.iter().copied().fold(f64::INFINITY, f64::min);
            execute(&with_dt(dt_min / 8.0), false)?.fields
        }
    };
    let errors = dts
        .par_iter()
        .map(|&dt| execute(&with_dt(dt), false).map(|out| (dt, l2_error(&out.fields, &reference))))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = convergence_rows(errors);
    let csv = cfg.output.join("converge.csv");
    let reference = match cfg.reference {
        Reference::Exact => "exact",
        Reference::Fine => "fine",
    };
    write_file(&csv, &converge_csv(cfg, reference, &rows))?;
    Ok(ConvergeOutcome { rows, csv })
}

fn check_matching(a: &RunConfig, b: &RunConfig) -> Result<(), HarnessError> {
    let mismatch = |what: &str| Err(HarnessError::Mismatch(format!("{what} differs between runs")));
    if a.model != b.model {
        return mismatch("model");
    }
    if a.extents != b.extents || a.lengths != b.lengths {
        return mismatch("grid");
    }
    if a.dt != b.dt {
        return mismatch("dt");
    }
    if a.t_final != b.t_final {
        return mismatch("T");
    }
    Ok(())
}

/// Runs every configuration and writes their records side by side to
/// `compare.csv` in the first configuration's output directory. Snapshots of
/// run `i` go to `run<i>/` below it.
pub fn cmd_compare(cfgs: &[RunConfig]) -> Result<PathBuf, HarnessError> {
    let first = cfgs.first().ok_or_else(|| HarnessError::Usage("compare needs at least one config".into()))?;
    for c in &cfgs[1..] {
        check_matching(first, c)?;
    }
    let base = first.output.clone();
    let runs: Vec<RunConfig> = cfgs
        .iter()
        .enumerate()
        .map(|(i, c)| RunConfig { output: base.join(format!("run{i}")), ..c.clone() })
        .collect();
    let outcomes = runs.par_iter().map(|c| execute(c, true)).collect::<Result<Vec<_>, _>>()?;
    let columns: Vec<_> = cfgs.iter().zip(&outcomes).map(|(c, o)| (c, o.record.rows.as_slice())).collect();
    let csv = base.join("compare.csv");
    write_file(&csv, &compare_csv(&columns))?;
    Ok(csv)
}
