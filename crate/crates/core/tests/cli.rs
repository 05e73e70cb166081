//! Black-box tests of the command-line interface: exit codes, output files,
//! and seed handling, exercised through the real binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bsde-rep"))
}

fn write_quick_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("quick.json");
    std::fs::write(
        &path,
        r#"{
        "generator": { "family": "pure-quadratic", "gamma": 0.5 },
        "target": { "y": 1.0, "z": [2.0] },
        "ladder": { "rungs": [
            { "epsilon": 0.0625, "steps": 8, "n_paths": 1000 },
            { "epsilon": 0.03125, "steps": 8, "n_paths": 1000 }
        ] },
        "seed": 5
    }"#,
    )
    .unwrap();
    path
}

#[test]
fn representation_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = bin()
            .args(["run-representation", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        // Short two-rung ladder: the decay gates cannot pass, so 2 not 0.
        assert_eq!(status.code(), Some(2));
        outputs.push((
            std::fs::read(out.join("representation.csv")).unwrap(),
            std::fs::read(out.join("representation.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    assert_eq!(outputs[0].1, outputs[1].1);
}

#[test]
fn seed_env_var_overrides_config_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let out = dir.path().join("env");
    let status = bin()
        .args(["run-representation", "--config"])
        .arg(&cfg)
        .args(["--seed", "9"])
        .arg("--out")
        .arg(&out)
        .env("BSDE_REP_SEED", "123")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let json = std::fs::read_to_string(out.join("representation.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["seed"], 123);
}

#[test]
fn malformed_config_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ this is not json").unwrap();
    let status = bin()
        .args(["run-representation", "--config"])
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(64));
}

#[test]
fn oversized_epsilon_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.json");
    std::fs::write(
        &path,
        r#"{
        "generator": { "family": "pure-quadratic", "gamma": 0.5 },
        "target": { "y": 1.0, "z": [2.0] },
        "ladder": { "rungs": [ { "epsilon": 1.5, "steps": 8, "n_paths": 100 } ] }
    }"#,
    )
    .unwrap();
    let status = bin()
        .args(["run-representation", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(64));
}

#[test]
fn undersized_declaration_fails_verify_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad-growth.json");
    std::fs::write(
        &path,
        r#"{
        "generator": { "family": "y-squared" },
        "target": { "y": 0.5, "z": [0.5] }
    }"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let status = bin()
        .args(["verify-assumptions", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // The compliance report still lands on disk with the counterexamples.
    let json = std::fs::read_to_string(out.join("compliance.json")).unwrap();
    assert!(json.contains("one-sided-growth"));
    assert!(json.contains("n_violations"));
}

#[test]
fn report_summarizes_existing_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let out = dir.path().join("run");
    bin()
        .args(["run-representation", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    let output = bin().arg("report").arg("--out").arg(&out).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("verdict: violation"));
    assert!(text.contains("g_target: 2"));
}
