use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sublab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sublab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("SUBLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn report(dir: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{command}_report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn zero_covector_shoot_is_constant_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"params": {"q0": [0.1, 0.2, 0.3], "steps": 50}}));
    let out = sublab(dir.path(), &["shoot", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let r = report(dir.path(), "shoot");
    assert_eq!(r["results"]["endpoint"], json!([0.1, 0.2, 0.3]));
    assert_eq!(r["passed"], json!(true));
    assert_eq!(r["provenance"]["threads"], json!(1));
    let csv = std::fs::read_to_string(dir.path().join("shoot_trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"model": {"name": "engel"}, "operation": "brackets", "params": {"expect": [2, 2]}}),
    );
    let out = sublab(dir.path(), &["brackets", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL growth-vector"));
    assert_eq!(report(dir.path(), "brackets")["passed"], json!(false));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "a.json", &json!({"seed": 1, "colour": "blue"}));
    let out = sublab(dir.path(), &["shoot", "--config", &unknown]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let wrong_op = write_config(dir.path(), "b.json", &json!({"operation": "bvp"}));
    assert_eq!(sublab(dir.path(), &["shoot", "--config", &wrong_op]).status.code(), Some(2));

    let bad_param = write_config(dir.path(), "c.json", &json!({"params": {"p0": [1.0]}}));
    assert_eq!(sublab(dir.path(), &["shoot", "--config", &bad_param]).status.code(), Some(2));

    assert_eq!(sublab(dir.path(), &["shoot", "--tol-nonsense", "1"]).status.code(), Some(2));
    assert_eq!(sublab(dir.path(), &["shoot", "--tol-drift", "-1"]).status.code(), Some(2));
    assert_eq!(sublab(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert!(!dir.path().join("shoot_report.json").exists());
}

#[test]
fn tolerance_override_reaches_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"params": {"p0": [0.3, 0.4, 1.0], "steps": 200}}));
    let out = sublab(dir.path(), &["shoot", "--config", &cfg, "--tol-drift=1e-30"]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    let r = report(dir.path(), "shoot");
    let drift = r["config"]["tolerances"]["drift"].as_f64().unwrap();
    assert!((drift / 1e-30 - 1.0).abs() < 1e-12);
    let out = sublab(dir.path(), &["shoot", "--config", &cfg, "--tol-drift", "1e-6"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}

#[test]
fn csv_output_is_deterministic() {
    let cfg = json!({"model": {"name": "heisenberg_product", "n": 2}, "seed": 7,
                     "params": {"p0": [0.3, -0.1, 0.8, 0.2, 0.5, -1.1], "steps": 100}});
    let read = || {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "c.json", &cfg);
        assert_eq!(sublab(dir.path(), &["shoot", "--config", &path]).status.code(), Some(0));
        std::fs::read(dir.path().join("shoot_trajectory.csv")).unwrap()
    };
    assert_eq!(read(), read());
}

#[test]
fn steer_and_brackets_on_engel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"model": {"name": "engel"}, "params": {"q1": [0.01, 0.0, 0.001, 0.0001]}}),
    );
    let out = sublab(dir.path(), &["steer", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let cfg = write_config(dir.path(), "d.json", &json!({"model": {"name": "engel"}, "params": {"expect": [2, 1, 1]}}));
    assert_eq!(sublab(dir.path(), &["brackets", "--config", &cfg]).status.code(), Some(0));
    let words = std::fs::read_to_string(dir.path().join("brackets_words.csv")).unwrap();
    assert!(words.starts_with("layer,word"));
}

#[test]
fn verify_runs_selected_suites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({"params": {"options": {"samples": 10}}}));
    let out = sublab(
        dir.path(),
        &["verify", "--config", &cfg, "--suite", "differentials", "--suite", "growth", "--suite", "steering", "--seed", "3"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let r = report(dir.path(), "verify");
    assert_eq!(r["provenance"]["seed"], json!(3));
    let text = stdout(&out);
    assert!(text.contains("PASS growth/"));
    assert!(!text.contains("conservation"));
    assert_eq!(sublab(dir.path(), &["verify", "--suite", "everything"]).status.code(), Some(2));
}
