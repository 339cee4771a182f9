use std::process::{Command, Output};

use serde_json::Value;

fn rslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rslab")).args(args).env_remove("RSLAB_SEED").output().unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

#[test]
fn report_has_expected_shape() {
    let out = rslab(&["verify", "elliptic", "--samples", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(&out);
    for key in ["suite", "params", "checks", "seed", "version"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["suite"], "elliptic");
    assert_eq!(v["params"]["M"], 2);
    assert_eq!(v["params"]["N"], 3);
    let checks = v["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        for key in ["name", "paper_ref", "max_residual", "tolerance", "pass", "wall_time_ms"] {
            assert!(c.get(key).is_some(), "check lacks {key}");
        }
        assert!(c["name"].as_str().unwrap().starts_with("elliptic."));
    }
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
}

#[test]
fn report_file_leaves_stdout_empty() {
    let dir = std::env::temp_dir().join(format!("rslab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rmatrix.json");
    let out = rslab(&["verify", "rmatrix", "--samples", "2", "--report", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["suite"], "rmatrix");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_configuration_exits_with_two() {
    for args in [
        &["verify", "elliptic", "--N", "1"][..],
        &["verify", "elliptic", "--M", "0"],
        &["verify", "elliptic", "--tau", "-1i"],
        &["verify", "elliptic", "--samples", "0"],
        &["verify", "identities", "--k", "7"],
        &["verify", "elliptic", "--tol", "-1"],
        &["verify", "nonsense"],
    ] {
        assert_eq!(rslab(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn identities_for_five_particles() {
    let out = rslab(&["verify", "identities", "--M", "2", "--N", "5", "--k", "2", "--samples", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(&out);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn negative_control_is_reported_as_passing() {
    let out = rslab(&["verify", "operators", "--M", "2", "--N", "3", "--samples", "3", "--negative-control"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(&out);
    let control = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "operators.negative_control_rational")
        .expect("control present");
    assert!(control["max_residual"].as_f64().unwrap() > 1e-3);
    assert_eq!(control["pass"], true);
}

#[test]
fn tiny_tolerance_fails_with_exit_one() {
    let out = rslab(&["verify", "rmatrix", "--samples", "2", "--tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_rslab"));
        cmd.args(["verify", "elliptic", "--samples", "2"]).args(extra).env_remove("RSLAB_SEED");
        if let Some(s) = env {
            cmd.env("RSLAB_SEED", s);
        }
        report(&cmd.output().unwrap())
    };
    assert_eq!(run(Some("17"), &[])["seed"], 17);
    assert_eq!(run(Some("17"), &["--seed", "4"])["seed"], 4);
    assert_eq!(run(None, &[])["seed"], 0);
    let a = run(Some("9"), &[]);
    let b = run(None, &["--seed", "9"]);
    let residuals = |v: &Value| -> Vec<Value> { v["checks"].as_array().unwrap().iter().map(|c| c["max_residual"].clone()).collect() };
    assert_eq!(residuals(&a), residuals(&b));
}

#[test]
fn dump_prints_matrix_rows() {
    let out = rslab(&["dump", "rmatrix", "--x", "0.31+0.12i", "--M", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split('\t').count() == 4));
    let out = rslab(&["dump", "rmatrix", "--x", "0", "--M", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
