//! End-to-end runs of the `gradsync` binary.

use std::path::Path;
use std::process::{Command, Output};

use gradsync::workload::WorkloadGraph;

fn gradsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradsync"))
        .args(args)
        .output()
        .expect("spawn gradsync")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn small_workload(dir: &Path) -> String {
    let path = dir.join("small.json").to_string_lossy().into_owned();
    let out = gradsync(&[
        "gen-workload",
        "--profile",
        "uniform",
        "--total-params",
        "200000",
        "--tensors",
        "20",
        "--compute-ms",
        "20",
        "--jitter",
        "uniform:50",
        "--out",
        &path,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

#[test]
fn uniform_workload_splits_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let out = gradsync(&[
        "gen-workload",
        "--profile",
        "uniform",
        "--total-params",
        "1000",
        "--tensors",
        "10",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let graph = WorkloadGraph::load(&path).unwrap();
    assert_eq!(graph.len(), 10);
    assert!(graph.tensors().iter().all(|t| t.num_elements() == 100));
}

#[test]
fn more_tensors_than_params_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let out = gradsync(&[
        "gen-workload",
        "--total-params",
        "5",
        "--tensors",
        "10",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!path.exists());
}

#[test]
fn zero_workers_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = gradsync(&[
        "simulate",
        "--workers",
        "0",
        "--workload",
        &workload,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("world_size"), "{stderr}");
}

#[test]
fn cycle_limit_reports_deadlock() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = gradsync(&[
        "simulate",
        "--workers",
        "2",
        "--workload",
        &workload,
        "--cycle-time-ms",
        "0.01",
        "--cycle-limit",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_writes_metrics_and_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out_dir = dir.path().join("run");
    let out = gradsync(&[
        "simulate",
        "--workers",
        "4",
        "--workload",
        &workload,
        "--steps",
        "3",
        "--grouped",
        "--groups",
        "4",
        "--timeline",
        "csv",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("simulate.json")).unwrap())
            .unwrap();
    assert_eq!(json["metrics"]["world_size"], 4);
    assert_eq!(json["metrics"]["grouped"], true);
    let timeline = std::fs::read_to_string(out_dir.join("timeline.csv")).unwrap();
    assert!(timeline.starts_with("# "));
    assert!(
        timeline.contains("BATCH_EXEC"),
        "{}",
        &timeline[..timeline.len().min(400)]
    );
}

#[test]
fn sweep_single_worker_rows_are_unit_efficiency() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = gradsync(&[
        "sweep",
        "--workers",
        "2,4",
        "--workload",
        &workload,
        "--steps",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(
        lines.next().unwrap(),
        "strategy,P,throughput_per_s,efficiency,t_comm_ms_mean,t_comp_ms_mean"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    for row in rows.iter().filter(|r| r[1] == "1") {
        assert_eq!(row[3], "1.000000");
    }
}

#[test]
fn perf_reproduces_per_gpu_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = gradsync(&[
        "perf",
        "--timings",
        &fixture("table1.json"),
        "--layers",
        &fixture("fitted_layers.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("59.67"), "{stdout}");
    assert!(stdout.contains("83.93"), "{stdout}");
    assert!(dir.path().join("perf.json").exists());
}

#[test]
fn missing_timing_file_is_an_input_error() {
    let out = gradsync(&["perf", "--timings", "/nonexistent/table.json"]);
    assert_eq!(out.status.code(), Some(2));
}
