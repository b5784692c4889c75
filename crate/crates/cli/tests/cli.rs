//! End-to-end checks of the command-line interface and its exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_racetube"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("racetube_cli_{name}"));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn nominal_hairpin_run_succeeds() {
    let out = tmp_dir("nominal");
    let status = bin()
        .args([
            "run",
            "--config",
            configs().join("default.toml").to_str().unwrap(),
            "--scenario",
            configs().join("scenarios/hairpin_nominal.toml").to_str().unwrap(),
            "--mode",
            "nominal",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("run.csv").exists());
    assert!(out.join("summary.json").exists());
    assert!(out.join("d_vs_s.svg").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], true);
    assert_eq!(summary["lateral_violations"]["count"], 0);
    assert_eq!(summary["seed"], 1);
}

#[test]
fn robust_without_certificate_is_config_error() {
    let out = tmp_dir("norcert");
    let status = bin()
        .args([
            "run",
            "--config",
            configs().join("default.toml").to_str().unwrap(),
            "--scenario",
            configs().join("scenarios/hairpin_nominal.toml").to_str().unwrap(),
            "--mode",
            "robust",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn corrupt_config_is_config_error() {
    let dir = tmp_dir("corrupt");
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "[vehicle\nmass = oops").unwrap();
    let status = bin()
        .args([
            "synthesize",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            dir.join("cert.json").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn slip_scenario_nominal_fails_with_recorded_cause() {
    let out = tmp_dir("slip_nominal");
    let status = bin()
        .args([
            "run",
            "--config",
            configs().join("default.toml").to_str().unwrap(),
            "--scenario",
            configs().join("scenarios/hairpin_slip.toml").to_str().unwrap(),
            "--mode",
            "nominal",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let cause = summary["failure"].as_str().unwrap();
    assert!(
        cause == "spin" || cause == "off_track",
        "unexpected cause {cause}"
    );
}

#[test]
fn self_compare_succeeds() {
    let out = tmp_dir("self_cmp_run");
    let status = bin()
        .args([
            "run",
            "--config",
            configs().join("default.toml").to_str().unwrap(),
            "--scenario",
            configs().join("scenarios/hairpin_nominal.toml").to_str().unwrap(),
            "--mode",
            "nominal",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let cmp = tmp_dir("self_cmp_out");
    let status = bin()
        .args([
            "compare",
            out.to_str().unwrap(),
            out.to_str().unwrap(),
            "--out",
            cmp.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(cmp.join("comparison.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cmp.join("comparison.json")).unwrap())
            .unwrap();
    let deltas = report["d_delta_max"].as_array().unwrap();
    assert!(deltas[1].as_f64().unwrap() < 1e-12);
}

#[test]
fn missing_run_dir_is_error() {
    let cmp = tmp_dir("missing_cmp");
    let status = bin()
        .args([
            "compare",
            "/nonexistent/run_dir",
            "--out",
            cmp.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
