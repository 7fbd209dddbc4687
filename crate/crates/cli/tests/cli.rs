use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use ced::commands::{run_report, scan_report};
use ced::config::{RunJob, ScanJob};
use ced::report::{self, read_histogram_csv, read_json, read_table_csv, RunReport, ScanReport};
use ced::ErrorReport;
use ced_core::engine::Execution;
use ced_core::observables::RecordingPlan;
use ced_core::phase::{ClassifyBudget, ScanConfig};

fn run_job(l: u32, p: f64, q: f64, t_end: f64, seed: u64, replicas: usize) -> RunJob {
    RunJob {
        d: 1,
        l,
        p,
        q,
        t_end,
        seed,
        replicas,
        plan: RecordingPlan::default(),
        fit_lo: 1,
        fit_hi: 10,
    }
}

fn ced(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ced"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn empty_run_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("empty");
    let r = run_report(&run_job(4, 1.0, 0.0, 1e-9, 1, 1), Execution::Serial).unwrap();
    assert_eq!(r.stats.events, 0);
    let files = report::write_report(&r, &prefix).unwrap();
    assert_eq!(files.len(), 3);
    let back: RunReport = read_json(&files[0]).unwrap();
    assert_eq!(back, r);
}

#[test]
fn run_report_and_histogram_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");
    let r = run_report(&run_job(16, 1.0, 0.3, 400.0, 7, 2), Execution::Serial).unwrap();
    let files = report::write_report(&r, &prefix).unwrap();
    let back: RunReport = read_json(&files[0]).unwrap();
    assert_eq!(back, r);
    let hist = read_histogram_csv(&files[1]).unwrap();
    let expected = r.observables.histogram.ok().unwrap();
    assert_eq!(&hist, expected);
    let rows = std::fs::read_to_string(&files[1]).unwrap().lines().count() - 1;
    assert_eq!(rows, expected.high_water() + 1);
    let plot = std::fs::read_to_string(&files[2]).unwrap();
    assert!(plot.contains("\"run.hist.csv\""));
}

#[test]
fn same_seed_gives_identical_report_text() {
    let job = run_job(16, 1.0, 0.3, 300.0, 11, 3);
    let a = report::to_json(&run_report(&job, Execution::Serial).unwrap());
    let b = report::to_json(&run_report(&job, Execution::Parallel).unwrap());
    assert_eq!(a, b);
    let c = report::to_json(&run_report(&run_job(16, 1.0, 0.3, 300.0, 12, 3), Execution::Serial).unwrap());
    assert_ne!(a, c);
}

#[test]
fn scan_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("grid");
    let mut config = ScanConfig::new(1, 5);
    config.sizes = vec![4, 8];
    config.budget = ClassifyBudget {
        t_end: 50.0,
        replicas: 1,
        max_events: 200_000,
    };
    let job = ScanJob {
        config,
        grid: vec![(0.1, 0.2), (2.0, 0.0), (3.0, 0.3)],
    };
    let r = scan_report(&job).unwrap();
    let files = report::write_scan(&r, &prefix).unwrap();
    let back: ScanReport = read_json(&files[0]).unwrap();
    assert_eq!(back, r);
    let (sizes, rows) = read_table_csv(&files[1]).unwrap();
    assert_eq!(sizes, vec![4, 8]);
    let key = |p: f64, q: f64, v: &str| (p.to_bits(), q.to_bits(), v.to_string());
    let from_csv: BTreeSet<_> = rows.iter().map(|x| key(x.p, x.q, x.verdict.as_str())).collect();
    let from_table: BTreeSet<_> = r.table.rows.iter().map(|x| key(x.p, x.q, x.verdict.as_str())).collect();
    assert_eq!(from_csv, from_table);
    assert_eq!(rows.len(), 3);
}

#[test]
fn binary_writes_files_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ok = ced(
        &[
            "run", "--L", "8", "--p", "1", "--q", "0.3", "--t-end", "100", "--out", "a",
        ],
        dir.path(),
    );
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    for name in ["a.report.json", "a.hist.csv", "a.plot"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    let bad = ced(&["run", "--L", "8", "--p", "-1", "--q", "0.3"], dir.path());
    assert!(!bad.status.success());
    let err: ErrorReport = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err.field.as_deref(), Some("p"));

    let unknown = ced(&["run", "--L", "8", "--nope"], dir.path());
    assert!(!unknown.status.success());
    let err: ErrorReport = serde_json::from_slice(&unknown.stderr).unwrap();
    assert_eq!(err.kind, "usage");
}

#[test]
fn oracle_and_bounds_from_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = ced(
        &["oracle", "--L", "1", "--p", "2", "--q", "1", "--m-max", "60"],
        dir.path(),
    );
    assert!(out.status.success());
    let r: report::OracleReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r.reliable);
    assert!((r.mean_site_mass - 1.0).abs() < 1e-6);
    assert_eq!(r.closed_form.unwrap().ratio, 0.5);

    let out = ced(&["bounds", "--q-list", "0.2,0.4"], dir.path());
    assert!(out.status.success());
    let r: report::BoundsReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.entries, 0);
    assert_eq!(r.evaluations.len(), 2);
    assert!(!r.evaluations[0].notices.is_empty());
}

#[test]
fn registry_file_is_evaluated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reg.json");
    std::fs::write(
        &path,
        r#"[
  {"name": "lo", "kind": "lower", "orientation": "p_of_q", "expression": "q", "provenance": "test"},
  {"name": "hi", "kind": "upper", "orientation": "q_of_p", "expression": "p / 4", "provenance": "test"}
]"#,
    )
    .unwrap();
    let out = ced(
        &["bounds", "--q", "0.5", "--registry", path.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: report::BoundsReport = serde_json::from_slice(&out.stdout).unwrap();
    let (lo, hi) = r.evaluations[0].window();
    assert_eq!(lo, Some(0.5));
    assert!((hi.unwrap() - 2.0).abs() < 1e-9);
}
