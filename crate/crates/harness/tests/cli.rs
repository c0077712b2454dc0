use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use resav_core::integrators::{RunError, StepError};
use resav_harness::experiment::execute;
use resav_harness::snapshot::read_snapshot;
use resav_harness::{cmd_compare, cmd_converge, cmd_run, parse_with_overrides, HarnessError, RunConfig};

const SMALL_AC: &str = "model = ac\nscheme = resav2-bdf2\nn = 16\nsigma0 = 0.01\ninit = random\ndt = 0.01\nT = 0.1\nseed = 5\n";

fn cfg(out: &Path, sets: &[&str]) -> RunConfig {
    let mut all: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    all.push(format!("output={}", out.display()));
    parse_with_overrides(SMALL_AC, &all).unwrap()
}

fn resav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resav")).args(args).output().expect("binary runs")
}

/// Numeric lines, skipping the header comment and column rows.
fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit() || c == '-')).collect()
}

#[test]
fn cli_run_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ac.cfg");
    fs::write(&config, SMALL_AC).unwrap();
    let out = dir.path().join("out");
    let o = resav(&["run", "--config", config.to_str().unwrap(), "--set", &format!("output={}", out.display())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("energy.csv")).unwrap();
    assert!(csv.starts_with("# resav-record v1 model=allen-cahn scheme=resav2-bdf2"));
    assert_eq!(csv.lines().nth(1).unwrap(), "t,E_original,E_modified,log_r,log_r2,xi,theta0,gamma,dissipation,mass,divergence_max");
    assert_eq!(data_rows(&csv).len(), 11);
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    fs::write(&config, "model = ac\nscheme = resav1-bdf3\n").unwrap();
    let o = resav(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scheme"));

    fs::write(&config, SMALL_AC).unwrap();
    let o = resav(&["run", "--config", config.to_str().unwrap(), "--set", "gamma=1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_exits_with_1() {
    let o = resav(&["run", "--config", "/nonexistent/resav.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invariant_violation_maps_to_3() {
    let violation = StepError::Invariant { quantity: "theta0", value: 1.5, bound: 1.0 };
    let e = HarnessError::Run(RunError { step: 4, t: 0.04, source: violation });
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn zero_final_time_gives_initial_row_only() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_run(&cfg(dir.path(), &["T=0"])).unwrap();
    let csv = fs::read_to_string(&summary.csv).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0,"));
}

#[test]
fn snapshots_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(dir.path(), &["snapshot_times=0.05, 0.1"]);
    let summary = cmd_run(&c).unwrap();
    let snaps = &summary.outcome.snapshots;
    assert_eq!(snaps.len(), 2);
    let last = read_snapshot(snaps.last().unwrap()).unwrap();
    assert!((last.t - 0.1).abs() < 1e-12);
    let fresh = execute(&c, false).unwrap();
    let (a, b) = (last.field.values(), fresh.fields[0].values());
    assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn same_seed_gives_identical_records() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = cmd_run(&cfg(a.path(), &[])).unwrap();
    let rb = cmd_run(&cfg(b.path(), &[])).unwrap();
    assert_eq!(fs::read_to_string(&ra.csv).unwrap(), fs::read_to_string(&rb.csv).unwrap());

    let c = tempfile::tempdir().unwrap();
    let rc = cmd_run(&cfg(c.path(), &["seed=6"])).unwrap();
    let first = fs::read_to_string(&ra.csv).unwrap();
    let other = fs::read_to_string(&rc.csv).unwrap();
    assert_ne!(data_rows(&first)[0], data_rows(&other)[0]);
}

#[test]
fn single_config_compare_matches_run() {
    let run_dir = tempfile::tempdir().unwrap();
    let cmp_dir = tempfile::tempdir().unwrap();
    let run = fs::read_to_string(cmd_run(&cfg(run_dir.path(), &[])).unwrap().csv).unwrap();
    let merged = fs::read_to_string(cmd_compare(&[cfg(cmp_dir.path(), &[])]).unwrap()).unwrap();
    assert_eq!(data_rows(&run), data_rows(&merged));
    assert!(merged.lines().nth(1).unwrap().starts_with("scheme,resav2-bdf2,"));
}

#[test]
fn compare_rejects_mismatch_and_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_compare(&[]).unwrap_err();
    assert!(matches!(err, HarnessError::Usage(_)));
    assert_eq!(err.exit_code(), 2);
    let err = cmd_compare(&[cfg(dir.path(), &[]), cfg(dir.path(), &["dt=0.02"])]).unwrap_err();
    assert!(matches!(err, HarnessError::Mismatch(_)), "{err}");
}

#[test]
fn compare_labels_unrelaxed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = cmd_compare(&[cfg(dir.path(), &[]), cfg(dir.path(), &["relaxed=off"])]).unwrap();
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("resav2-bdf2:unrelaxed"));
    assert_eq!(data_rows(&text).len(), 11);
}

#[test]
fn single_step_converge_has_empty_rate() {
    let dir = tempfile::tempdir().unwrap();
    let c = parse_with_overrides(
        "model = ac\nforcing = manufactured\nn = 16\nsigma0 = 1e-4\ndt = 0.05\nT = 0.2\nscheme = resav1-bdf1\n",
        &[format!("output={}", dir.path().display())],
    )
    .unwrap();
    let table = cmd_converge(&c).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(table.rows[0].rate.is_none());
    let csv = fs::read_to_string(table.csv).unwrap();
    assert!(csv.lines().last().unwrap().ends_with(','));
}
