use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hyk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyk"))
        .args(args)
        .current_dir(dir)
        .env_remove("HYK_THREADS")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path, out: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{out}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn hy_writes_json_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyk(dir.path(), &["hy", "--rho", "1e-3", "-o", "hy.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("hy.json")).unwrap()).unwrap();
    assert!(v["energy"]["total"].as_f64().is_some_and(|t| t > 0.0), "{v}");
    let m = manifest(dir.path(), "hy.json");
    assert_eq!(m["subcommand"], "hy");
    assert_eq!(m["all_passed"], true);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = hyk(dir.path(), &["pauli-mc", "--samples", "2000", "--strata", "4", "-o", "a.json"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let second = hyk(dir.path(), &["pauli-mc", "--config", "a.json.manifest.json", "--threads", "3", "-o", "b.json"]);
    assert_eq!(second.status.code(), Some(0), "{}", String::from_utf8_lossy(&second.stderr));
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fcurve_csv_starts_at_zero_and_writes_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyk(dir.path(), &["fcurve", "--n", "11", "--plot", "-o", "f.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("f.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    assert!(dir.path().join("f.plot.py").exists());
}

#[test]
fn fock_verify_preset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyk(dir.path(), &["fock-verify", "-o", "fv.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path(), "fv.json");
    assert!(m["checks"].as_array().unwrap().len() > 20);
}

#[test]
fn failing_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyk(dir.path(), &["scatter", "--tol", "1e-300", "-o", "s.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(manifest(dir.path(), "s.csv")["all_passed"], false);
}

#[test]
fn invalid_input_exits_with_two_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyk(dir.path(), &["tscaling", "--gamma", "0.2", "-o", "t.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("t.csv.manifest.json").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"rho": 1e-3, "bogus": 1}"#).unwrap();
    let out = hyk(dir.path(), &["hy", "--config", "c.json", "-o", "hy.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyk(dir.path(), &["sweep", "--command", "hy", "--param", "rho", "--values", "1e-4,1e-3,1e-2", "-o", "s.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("s.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().get(0), Some("rho"));
    assert_eq!(rd.records().count(), 3);
}

#[test]
fn hyk_threads_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hyk"))
        .args(["hy", "--rho", "1e-3", "--threads", "2", "-o", "hy.json"])
        .current_dir(dir.path())
        .env("HYK_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(manifest(dir.path(), "hy.json")["workers"], 3);
}
