use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn slidoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slidoc"))
        .args(args)
        .env_remove("SLIDOC_THREADS")
        .output()
        .expect("run slidoc")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.trim().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).expect("stderr is one JSON line")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn simulate_prints_csv_without_out() {
    let out = slidoc(&["simulate", "--problem", "p2-sliding", "--steps-per-interval", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,t,mode,x0,x1,z,g,alpha"));
    // 20 regular steps plus the node inserted at the surface crossing.
    assert_eq!(lines.count(), 22);
    assert!(text.contains(",sliding,"));
}

#[test]
fn unknown_problem_is_a_domain_error() {
    let out = slidoc(&["gradient", "--problem", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "problem");
    assert_eq!(err["detail"]["UnknownProblem"], "nope");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(slidoc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(slidoc(&["verify-orders", "--problem", "smooth-linear"]).status.code(), Some(2));
    assert_eq!(slidoc(&["simulate"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_slidoc"))
        .args(["tableau-check"])
        .env("SLIDOC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad_type = write(dir.path(), "a.json", "{\"problem\": \"p2-sliding\",\n \"N\": \"ten\"}");
    let out = slidoc(&["simulate", "--config", &bad_type]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["detail"]["Parse"]["path"], "N");
    assert_eq!(err["detail"]["Parse"]["line"], 2);

    let bad_range = write(dir.path(), "b.json", r#"{"problem": "p2-sliding", "gamma": 1.0}"#);
    let err = stderr_json(&slidoc(&["optimize", "--config", &bad_range]));
    assert_eq!(err["detail"]["Validation"]["field"], "gamma");
}

#[test]
fn newton_failure_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "n.json", r#"{"problem": "smooth-linear", "newton_tol": 1e-300}"#);
    let out = slidoc(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "integration");
    assert!(err["detail"]["NewtonDivergence"].is_object(), "{err}");
}

#[test]
fn sidecars_follow_the_output_stem() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("run.csv");
    let adj = dir.path().join("costate.csv");
    assert!(slidoc(&["simulate", "--problem", "p2-sliding", "--out", traj.to_str().unwrap()]).status.success());
    assert!(slidoc(&["adjoint", "--problem", "p2-sliding", "--out", adj.to_str().unwrap()]).status.success());
    let t: Value = serde_json::from_slice(&std::fs::read(dir.path().join("run.transitions.json")).unwrap()).unwrap();
    assert_eq!(t["transitions"][0]["kind"], "enter_sliding");
    assert_eq!(t["meta"]["command"], "simulate");
    let j: Value = serde_json::from_slice(&std::fs::read(dir.path().join("costate.jumps.json")).unwrap()).unwrap();
    assert_eq!(j["functional"], "phi");
    assert_eq!(j["jumps"].as_array().unwrap().len(), 1);
}

#[test]
fn thread_count_does_not_change_results() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_slidoc"))
            .args(["check-gradient", "--problem", "smooth-linear"])
            .env("SLIDOC_THREADS", threads)
            .output()
            .unwrap()
    };
    let (one, four) = (run("1"), run("4"));
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn config_hash_tracks_inputs() {
    let hash = |args: &[&str]| -> Value {
        let out = slidoc(args);
        assert!(out.status.success());
        serde_json::from_slice::<Value>(&out.stdout).unwrap()["meta"]["config_hash"].clone()
    };
    let a = hash(&["gradient", "--problem", "smooth-linear"]);
    assert_eq!(a, hash(&["gradient", "--problem", "smooth-linear"]));
    assert_ne!(a, hash(&["gradient", "--problem", "smooth-linear", "--steps-per-interval", "4"]));
    assert_ne!(a, hash(&["gradient", "--problem", "smooth-linear", "--functional", "phi", "--steps-per-interval", "9"]));
}

#[test]
fn history_csv_has_one_row_per_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("h.csv");
    let out = slidoc(&["optimize", "--problem", "constrained-toy", "--history-csv", csv_path.to_str().unwrap()]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert!(text.starts_with("k,F0,M,c,sigma,alpha\n"));
    assert_eq!(text.lines().count() - 1, doc["history"].as_array().unwrap().len());
}

#[test]
fn custom_tableau_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let euler = write(dir.path(), "be.json", r#"{"a": [[1.0]], "b": [1.0], "c": [1.0]}"#);
    let out = slidoc(&["tableau-check", "--tableau", &euler]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["tableaus"][0]["p"], 1);
    assert!(doc["adjoint_vs_radau_ia_closed_form"].is_null());
}
