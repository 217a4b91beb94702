use std::fs;
use std::path::Path;

use ddreg::cli::main_with;
use ddreg::config::ROLLING_MILL_TOML;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    main_with(std::iter::once("ddreg").chain(args.iter().copied()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn sample_period_off_the_step_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &ROLLING_MILL_TOML.replace("sample_period = 0.05", "sample_period = 0.0505"));
    let out = dir.path().join("out");
    assert_eq!(run(&["collect", "--config", &cfg, "--out", out.to_str().unwrap()]), 2);
    assert!(!out.join("dataset.csv").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &ROLLING_MILL_TOML.replace("seeds = 5", "seeds = 5\nsetle_tol = 1e-6"));
    assert_eq!(run(&["collect", "--config", &cfg]), 2);
}

#[test]
fn linear_mode_on_a_nonlinear_plant_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let code = run(&["reproduce", "robot-arm", "--mode", "linear", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn ell_override_needs_a_harmonic_model() {
    assert_eq!(run(&["reproduce", "rolling-mill", "--ell", "2"]), 2);
}

#[test]
fn missing_config_and_bad_flags() {
    assert_eq!(run(&["collect", "--config", "/nonexistent/cfg.toml"]), 2);
    assert_eq!(run(&["collect", "--config"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn collected_datasets_are_byte_identical_and_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ROLLING_MILL_TOML);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        assert_eq!(run(&["collect", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]), 0);
    }
    let bytes = |d: &Path| fs::read(d.join("dataset.csv")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));

    let meta = read_json(&a.join("dataset.meta.json"));
    assert_eq!(meta["seed"], 9);
    assert_eq!(meta["config_name"], "rolling_mill");
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(meta["config_sha256"], read_json(&b.join("dataset.meta.json"))["config_sha256"]);
    assert_ne!(meta["config_sha256"], read_json(&c.join("dataset.meta.json"))["config_sha256"]);
    for m in ["U0", "Z0", "Z1", "M"] {
        assert!(a.join("matrices").join(format!("{m}.csv")).exists(), "{m}");
    }
}

#[test]
fn collect_synthesize_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ROLLING_MILL_TOML);
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["collect", "--config", &cfg, "--out", o]), 0);
    assert_eq!(run(&["synthesize", "--config", &cfg, "--out", o]), 0);
    assert!(out.join("gain.meta.json").exists());
    let report = dir.path().join("eval.json");
    let code = run(&["evaluate", "--config", &cfg, "--out", o, "--json-report", report.to_str().unwrap()]);
    assert_eq!(code, 0);
    let summary = read_json(&report);
    assert_eq!(summary["exit_code"], 0);
    for r in summary["reports"].as_array().unwrap() {
        assert!(r["nulling_ok"].as_bool().unwrap());
    }
    assert!(out.join("spectrum_e1.csv").exists());
}

#[test]
fn synthesizing_a_dataset_from_another_plant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("arm");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["collect", "--config", &write_config(dir.path(), ddreg::config::ROBOT_ARM_TOML), "--out", o]), 0);
    let cfg = write_config(dir.path(), ROLLING_MILL_TOML);
    let ds = out.join("dataset.csv");
    assert_eq!(run(&["synthesize", "--config", &cfg, "--dataset", ds.to_str().unwrap(), "--out", o]), 2);
}

#[test]
fn failures_still_write_the_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    assert_eq!(run(&["collect", "--config", "/nonexistent.toml", "--json-report", report.to_str().unwrap()]), 2);
    let v = read_json(&report);
    assert_eq!(v["status"], "error");
    assert_eq!(v["exit_code"], 2);
}
