use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twinroute"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_cmd(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn twinroute")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_a_nine_column_row() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios().join("baseline.json");
    let out = run_cmd(&["run", "--scenario", s(&sc), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 9);
    assert_eq!(lines[1].split(',').count(), 9);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), csv);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sc = scenarios().join("baseline.json");
    for d in [&a, &b] {
        let j = d.path().join("routes.jsonl");
        let t = d.path().join("twin.jsonl");
        let out = run_cmd(&[
            "run", "--scenario", s(&sc), "--seed", "7", "--out", s(d.path()),
            "--routes-journal", s(&j), "--twin-journal", s(&t),
        ]);
        assert!(out.status.success());
    }
    for f in ["metrics.csv", "routes.jsonl", "twin.jsonl"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn missing_network_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("sc.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scenarios().join("baseline.json")).unwrap()).unwrap();
    v["network_file"] = serde_json::json!("nope.json");
    std::fs::write(&sc, v.to_string()).unwrap();
    let out = run_cmd(&["run", "--scenario", s(&sc), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn malformed_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("sc.json");
    std::fs::write(&sc, "{\n  \"network_file\": \"x.json\",\n  \"sim\": {\"dt_s\": oops}\n}\n").unwrap();
    let out = run_cmd(&["run", "--scenario", s(&sc), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run_cmd(&["run"]).status.code(), Some(2));
    assert_eq!(run_cmd(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn kpi_rejects_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios().join("baseline.json");
    let out = run_cmd(&["kpi", "--scenario", s(&sc), "--samples", "0", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kpi_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios().join("baseline.json");
    let out = run_cmd(&["kpi", "--scenario", s(&sc), "--samples", "20000", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("kpi.csv").exists());
    assert!(dir.path().join("kpi.txt").exists());
}

#[test]
fn single_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios().join("baseline.json");
    let out = run_cmd(&[
        "sweep", "--scenario", s(&sc), "--param", "p_user", "--values", "0.2", "--seeds", "1",
        "--seed", "7", "--out", s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let run_row = sweep.lines().find(|l| l.starts_with("run,")).unwrap();
    let seed: u64 = run_row.split(',').nth(2).unwrap().parse().unwrap();

    // Same seed through `run`.
    let patched = dir.path().join("sc.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&sc).unwrap()).unwrap();
    v["traffic"]["p_user"] = serde_json::json!(0.2);
    v["network_file"] = serde_json::json!(s(&scenarios().join("network.json")));
    std::fs::write(&patched, v.to_string()).unwrap();
    let rd = dir.path().join("run");
    let out = run_cmd(&["run", "--scenario", s(&patched), "--seed", &seed.to_string(), "--out", s(&rd)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(rd.join("metrics.csv")).unwrap();
    let metrics_row = metrics.lines().nth(1).unwrap();
    let tail: Vec<&str> = run_row.split(',').skip(2).collect();
    assert_eq!(tail.join(","), metrics_row);
}
