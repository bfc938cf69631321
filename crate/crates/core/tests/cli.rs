use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use refractor_core::refractor::{parse_surface_csv, refractor_measure, surface_csv, RefractorEnvelope};
use refractor_core::scene::{Scene, SceneConfig};
use serde_json::Value;

fn scene_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refractor")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn params_reproduces_the_chain() {
    let out = cli(&["params", "--kappa", "2", "--delta", "1", "--width", "0.5", "--tau1", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!((v["inv_tau1"].as_f64().unwrap() - 9.950_124_378_879_11).abs() < 1e-12);
    assert!((v["L"].as_f64().unwrap() - 9.900_000_003_093_944).abs() < 1e-12);
    assert!((v["delta"].as_f64().unwrap() - 9.346_958_164_634_126).abs() < 1e-12);
    assert!((v["tau0"].as_f64().unwrap() - 1.153_041_835_365_874).abs() < 1e-12);
    assert_eq!(v["conditions_hold"], Value::Bool(true));
}

#[test]
fn alpha_prints_one_seventh() {
    let out = cli(&["alpha", "--n", "2", "--q", "1"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.14285714285714285");
    let bad = cli(&["alpha", "--n", "2", "--q", "2.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn incompatible_slab_fails_validation() {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(scene_path("line2.json")).unwrap()).unwrap();
    cfg["slab"]["tau1"] = Value::from(2.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = cli(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    let compat = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "compatibility").unwrap();
    assert_eq!(compat["passed"], Value::Bool(false));
    // solve refuses the same scene
    let solve = cli(&["solve", path.to_str().unwrap(), "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(solve.status.code(), Some(1));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = cli(&["validate", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "Io");
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn solve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = cli(&["solve", scene_path("line2.json").to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let sol: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("solution.json")).unwrap()).unwrap();
    let b: Vec<f64> = serde_json::from_value(sol["b"].clone()).unwrap();
    let text = std::fs::read_to_string(out_dir.join("scene.json")).unwrap();
    let scene = Arc::new(Scene::new(SceneConfig::from_json(&text).unwrap()).unwrap());
    let env = RefractorEnvelope::new(scene.clone(), b).unwrap();
    let m = refractor_measure(&env);
    let residual = m.values.iter().zip(scene.targets()).map(|(v, t)| (v - t.weight).abs()).fold(0.0, f64::max);
    assert_eq!(residual, sol["residual"].as_f64().unwrap());
    let csv = std::fs::read_to_string(out_dir.join("surface.csv")).unwrap();
    assert_eq!(csv, surface_csv(&env));
    assert_eq!(parse_surface_csv(&csv).unwrap().len(), scene.grid.len());

    let trace = cli(&["trace", out_dir.to_str().unwrap(), "--mode", "cell"]);
    assert_eq!(trace.status.code(), Some(0));
    let report = cli(&["report", out_dir.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0));
    assert!(out_dir.join("report.json").exists());
}
