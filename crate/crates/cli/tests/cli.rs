use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use edgecoop::runtime::{parse_bench_csv, Strategy};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgecoop")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const CONFIG: &str = "[data]\nclasses = 3\nper_class = 40\ndims = \"1x4x4\"\nseparation = 7.0\n\n\
[teacher]\narch = \"dense 16; relu; dense 3\"\n\n[train]\nepochs = 5\n";

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.toml"), CONFIG).unwrap();
    ok(d, &["gen-data", "--config", "cfg.toml", "--out", "data.ecds"]);
    ok(d, &["train-teacher", "--config", "cfg.toml", "--data", "data.ecds", "--out", "teacher.bin"]);
    dir
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[data]\nclases = 3\n").unwrap();
    let out = run(dir.path(), &["gen-data", "--config", "bad.toml", "--out", "x.ecds"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clases"));
}

#[test]
fn missing_input_file_is_a_general_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train-teacher", "--data", "nope.ecds", "--out", "t.bin"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_model_file_is_rejected() {
    let dir = prepared();
    let d = dir.path();
    fs::write(d.join("junk.bin"), b"not a model").unwrap();
    let out = run(d, &["run-edge", "--student", "junk.bin", "--data", "data.ecds", "--strategy", "edge"]);
    assert!(!out.status.success());
}

#[test]
fn edge_only_runs_without_a_cloud() {
    let dir = prepared();
    let d = dir.path();
    ok(
        d,
        &["run-edge", "--student", "teacher.bin", "--config", "cfg.toml", "--data", "data.ecds", "--strategy", "edge", "--report", "edge.csv"],
    );
    let reports = parse_bench_csv(&fs::read_to_string(d.join("edge.csv")).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].strategy, Strategy::EdgeOnly);
    assert_eq!(reports[0].offload_fraction, 0.0);
    assert_eq!(reports[0].samples, 24);
}

#[test]
fn cloud_strategy_without_server_fails_cleanly() {
    let dir = prepared();
    let d = dir.path();
    let free = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let out = run(
        d,
        &["run-edge", "--student", "teacher.bin", "--data", "data.ecds", "--strategy", "cloud", "--cloud", &free],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_bench_report_parses_back() {
    let dir = prepared();
    let d = dir.path();
    let cfg = format!("{CONFIG}\n[compress]\nepisodes = 3\nhidden_width = 8\n\n[bench]\nmode = \"simulated\"\nrtt_ms = 40\n");
    fs::write(d.join("cfg.toml"), cfg).unwrap();
    ok(
        d,
        &["compress", "--teacher", "teacher.bin", "--config", "cfg.toml", "--data", "data.ecds", "--out", "student.bin", "--history", "history.csv"],
    );
    let history = fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    ok(
        d,
        &["train-gate", "--student", "student.bin", "--config", "cfg.toml", "--data", "data.ecds", "--kind", "knn", "--out", "gate.bin", "--report", "gate.csv"],
    );
    assert!(fs::read_to_string(d.join("gate.csv")).unwrap().starts_with("kind,train_M"));
    let out = ok(
        d,
        &["bench", "--student", "student.bin", "--teacher", "teacher.bin", "--gate", "gate.bin", "--config", "cfg.toml", "--data", "data.ecds", "--report", "bench.csv"],
    );
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("edge_only") && table.contains("cooperation"));
    let reports = parse_bench_csv(&fs::read_to_string(d.join("bench.csv")).unwrap()).unwrap();
    let names: Vec<Strategy> = reports.iter().map(|r| r.strategy).collect();
    assert_eq!(names, Strategy::ALL.to_vec());
    assert!(reports[0].runtime_s < reports[1].runtime_s);
}
