//! End-to-end runs of the `corrnoise` binary.

use std::path::Path;
use std::process::{Command, Output};

fn corrnoise(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrnoise"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run corrnoise")
}

const SMALL: [&str; 6] = ["--set", "sim.test_length=120", "--set", "sim.train_length=400", "--set", "trials=2"];

fn small(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = extra.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

#[test]
fn simulate_writes_datasets_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = corrnoise(&small(&["simulate", "--out-dir", "sim", "--seed", "5"]), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trial_000/train.jsonl", "trial_000/test.jsonl", "trial_000/map.json", "trial_001/test.jsonl", "manifest.json"] {
        assert!(dir.path().join("sim").join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("sim/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn full_pipeline_reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = corrnoise(
            &small(&["full-pipeline", "--out-dir", name, "--set", "learner.train_kernel=false"]),
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["report.json", "nees.csv", "trial_000/test.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn learn_then_estimate_from_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(corrnoise(&small(&["simulate", "--out-dir", "sim"]), dir.path()).status.success());
    let learn = corrnoise(
        &[
            "learn", "--out-dir", "model", "--method", "SVD-CONST",
            "--set", "paths.train=sim/trial_000/train.jsonl", "--set", "paths.map=sim/trial_000/map.json",
        ],
        dir.path(),
    );
    assert!(learn.status.success(), "{}", String::from_utf8_lossy(&learn.stderr));
    let est = corrnoise(
        &[
            "estimate", "--out-dir", "est", "--method", "SVD-CONST",
            "--set", "paths.test=sim/trial_000/test.jsonl", "--set", "paths.map=sim/trial_000/map.json",
            "--set", "paths.model=model/model.json",
        ],
        dir.path(),
    );
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    for f in ["result.json", "evaluation.json", "envelope.csv"] {
        assert!(dir.path().join("est").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"no_such_key": 1}"#).unwrap();
    let out = corrnoise(&["--config", "bad.json", "--out-dir", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let missing = corrnoise(&["estimate", "--out-dir", "y"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn corrupt_dataset_exits_with_code_1_and_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(corrnoise(&small(&["simulate", "--out-dir", "sim"]), dir.path()).status.success());
    std::fs::write(dir.path().join("corrupt.jsonl"), "{\"k\": 0, \"t\": \n").unwrap();
    let out = corrnoise(
        &[
            "learn", "--out-dir", "fail", "--method", "SVD-CONST",
            "--set", "paths.train=corrupt.jsonl", "--set", "paths.map=sim/trial_000/map.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("fail/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "partial");
}
