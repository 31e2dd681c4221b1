//! End-to-end command tests: one per exit code path, plus artifact shape
//! and determinism checks.

use std::fs;

use assert_cmd::Command;
use predicates::prelude::*;
use tempfile::tempdir;

fn tangrad() -> Command {
    Command::cargo_bin("tangrad").unwrap()
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

const CIRCLE: &str = r#"{
    "n": 2,
    "objective": "x1",
    "constraints": [{ "expr": "x1^2 + x2^2 - 1", "kind": "eq" }],
    "x0": [-0.6, 0.8],
    "eta": 0.5
}"#;

const TWO_PARABOLA: &str = r#"{
    "n": 1,
    "objectives": ["(x1 - 1)^2", "(x1 + 1)^2"],
    "x0": [0.4]
}"#;

#[test]
fn solve_converges_exit_0() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", CIRCLE);
    let out = dir.path().join("result.json");
    tangrad()
        .arg("solve")
        .arg(&problem)
        .arg("--out")
        .arg(&out)
        .assert()
        .success()
        .stdout(predicate::str::contains("\"Converged\""));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert!((doc["x"][0].as_f64().unwrap() + 1.0).abs() < 1e-6);
    assert!(doc["x"][1].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn malformed_json_exit_1() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", r#"{"n": 2, "objective": "x1 +", "x0": [0, 0]}"#);
    tangrad()
        .arg("solve")
        .arg(&problem)
        .assert()
        .code(1)
        .stderr(predicate::str::contains("objective"));
}

#[test]
fn missing_file_exit_1() {
    tangrad()
        .arg("solve")
        .arg("/nonexistent/problem.json")
        .assert()
        .code(1);
}

#[test]
fn iteration_budget_exit_2() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", CIRCLE);
    let trace = dir.path().join("trace.json");
    tangrad()
        .arg("solve")
        .arg(&problem)
        .arg("--max-iters")
        .arg("3")
        .arg("--trace")
        .arg(&trace)
        .assert()
        .code(2);
    let records: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(trace).unwrap()).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 3);
}

#[test]
fn dependent_constraints_exit_3() {
    let dir = tempdir().unwrap();
    // duplicated equality: the Gram system is singular at every point
    let problem = write(
        &dir,
        "p.json",
        r#"{
            "n": 3,
            "objective": "x1",
            "constraints": [
                { "expr": "x1 + x2 - 1", "kind": "eq" },
                { "expr": "x1 + x2 - 1", "kind": "eq" }
            ],
            "x0": [0.0, 0.0, 0.0]
        }"#,
    );
    tangrad().arg("solve").arg(&problem).assert().code(3);
}

#[test]
fn history_rows_match_trace() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", CIRCLE);
    let trace = dir.path().join("trace.json");
    let history = dir.path().join("history.csv");
    tangrad()
        .arg("solve")
        .arg(&problem)
        .arg("--trace")
        .arg(&trace)
        .arg("--history")
        .arg(&history)
        .assert()
        .success();
    let records: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(trace).unwrap()).unwrap();
    let csv = fs::read_to_string(history).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,f,gnorm,step,active_count"));
    assert_eq!(lines.count(), records.as_array().unwrap().len());
}

#[test]
fn results_are_deterministic() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", CIRCLE);
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    for out in [&out_a, &out_b] {
        tangrad()
            .arg("solve")
            .arg(&problem)
            .arg("--out")
            .arg(out)
            .assert()
            .success();
    }
    assert_eq!(fs::read(out_a).unwrap(), fs::read(out_b).unwrap());
}

#[test]
fn minimax_two_parabola_exit_0() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", TWO_PARABOLA);
    tangrad()
        .arg("minimax")
        .arg(&problem)
        .assert()
        .success()
        .stdout(predicate::str::contains("\"z\":1.0"));
}

#[test]
fn minimax_empty_objectives_exit_1() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", r#"{"n": 1, "objectives": [], "x0": [0.0]}"#);
    tangrad()
        .arg("minimax")
        .arg(&problem)
        .assert()
        .code(1)
        .stderr(predicate::str::contains("objectives"));
}

#[test]
fn minimax_single_objective_matches_solve() {
    let dir = tempdir().unwrap();
    let as_minimax = write(
        &dir,
        "m.json",
        r#"{"n": 1, "objectives": ["(x1 - 2)^2"], "x0": [0.0]}"#,
    );
    let as_solve = write(
        &dir,
        "s.json",
        r#"{"n": 1, "objective": "(x1 - 2)^2", "x0": [0.0]}"#,
    );
    let m = tangrad().arg("minimax").arg(&as_minimax).assert().success();
    let s = tangrad().arg("solve").arg(&as_solve).assert().success();
    let mv: serde_json::Value =
        serde_json::from_slice(&m.get_output().stdout).unwrap();
    let sv: serde_json::Value =
        serde_json::from_slice(&s.get_output().stdout).unwrap();
    let xm = mv["x"][0].as_f64().unwrap();
    let xs = sv["x"][0].as_f64().unwrap();
    assert!((xm - xs).abs() < 1e-6, "{xm} vs {xs}");
}

#[test]
fn diagnose_reports_rate_exit_0() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", CIRCLE);
    let trace = dir.path().join("trace.json");
    tangrad()
        .arg("solve")
        .arg(&problem)
        .arg("--tol")
        .arg("1e-13")
        .arg("--trace")
        .arg(&trace)
        .assert()
        .success();
    let out = tangrad()
        .arg("diagnose")
        .arg(&trace)
        .arg(&problem)
        .assert()
        .success();
    let report: serde_json::Value =
        serde_json::from_slice(&out.get_output().stdout).unwrap();
    // eta = 0.5 so the contraction factor is |1 - eta| = 0.5
    let rate = report["rate"].as_f64().unwrap();
    assert!((rate - 0.5).abs() < 0.05, "rate {rate}");
    let rho = report["spectral_radius"].as_f64().unwrap();
    assert!((rho - 0.5).abs() < 1e-2, "spectral radius {rho}");
}

#[test]
fn diagnose_short_trace_exit_2() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", CIRCLE);
    let trace = dir.path().join("trace.json");
    tangrad()
        .arg("solve")
        .arg(&problem)
        .arg("--max-iters")
        .arg("6")
        .arg("--trace")
        .arg(&trace)
        .assert()
        .code(2);
    tangrad()
        .arg("diagnose")
        .arg(&trace)
        .arg(&problem)
        .assert()
        .code(2)
        .stderr(predicate::str::contains("usable"));
}

#[test]
fn diagnose_dimension_mismatch_exit_1() {
    let dir = tempdir().unwrap();
    let problem = write(&dir, "p.json", CIRCLE);
    let trace = dir.path().join("trace.json");
    tangrad()
        .arg("solve")
        .arg(&problem)
        .arg("--trace")
        .arg(&trace)
        .assert()
        .success();
    let other = write(&dir, "q.json", r#"{"n": 1, "objective": "x1^2", "x0": [1.0]}"#);
    tangrad()
        .arg("diagnose")
        .arg(&trace)
        .arg(&other)
        .assert()
        .code(1)
        .stderr(predicate::str::contains("dimension"));
}

#[test]
fn auxetic_demo_writes_artifacts() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("aux.json");
    let history = dir.path().join("aux.csv");
    tangrad()
        .arg("auxetic-demo")
        .arg("--directions")
        .arg("4")
        .arg("--max-iters")
        .arg("150")
        .arg("--out")
        .arg(&out)
        .arg("--history")
        .arg(&history)
        .assert()
        .code(2); // leader cycling: it ends on the iteration budget
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(doc["poisson_ratios"].as_array().unwrap().len(), 4);
    assert_eq!(doc["stiffness"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(history).unwrap();
    assert!(csv.starts_with("k,max_nu,min_nu\n"));
    assert_eq!(csv.lines().count(), 151); // header + one row per iteration
}
