use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hisd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hisd")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SADDLE_2D: &str =
    "energy_expression = \"x1**2 - x2**2 + 0.25*x2**4\"\ninitial_point = [0.3, 0.2]\nmax_index = 1\n";

#[test]
fn validate_prints_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SADDLE_2D).unwrap();
    let out = hisd(&["validate", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("time_step = 0.01"));
    assert!(text.contains("dim = 2"));
    fs::write(dir.path().join("resolved.toml"), &text).unwrap();
    let again = hisd(&["validate", "resolved.toml"], dir.path());
    assert_eq!(stdout(&again), text);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "initial_point = [0.0]\n").unwrap();
    assert_eq!(hisd(&["validate", "bad.toml"], dir.path()).status.code(), Some(1));
    fs::write(dir.path().join("neg.toml"), format!("{SADDLE_2D}time_step = -1.0\n")).unwrap();
    assert_eq!(hisd(&["run", "neg.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(hisd(&["validate", "missing.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(hisd(&["gallery", "nonexistent"], dir.path()).status.code(), Some(1));
}

#[test]
fn search_reports_saddle() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SADDLE_2D).unwrap();
    let out = hisd(&["search", "c.toml", "--index", "1", "--out", "s.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("Status: converged"));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(doc["morse_index"], 1);
}

#[test]
fn run_restart_and_export() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SADDLE_2D).unwrap();
    let out = hisd(&["--seed", "7", "run", "c.toml", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("Saddles found: 3"));
    let res = dir.path().join("res");
    for f in ["manifest.json", "state.json", "saddles.json", "landscape.dot", "grid.csv", "trajectories/0_-1.csv"] {
        assert!(res.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(res.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["system_hash"].as_str().unwrap().len(), 64);

    let out = hisd(
        &["restart-saddle", "res/state.json", "--id", "0", "--perturbation=-0.01,0.0", "--max-index", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("Saddles found: 3"));
    let bad = hisd(
        &["restart-saddle", "res/state.json", "--id", "42", "--perturbation", "0,0", "--max-index", "1"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(1));

    let out = hisd(&["export", "res/state.json", "--out", "exp", "--dot"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("exp/landscape.dot").exists());
    assert!(!dir.path().join("exp/saddles.json").exists());
}

#[test]
fn gallery_prints_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = hisd(&["gallery", "mueller_brown", "--print-config"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("time_step = 0.0001"));
    assert!(text.contains("[[restarts]]"));
}
