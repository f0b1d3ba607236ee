use opforge::json::mat_to_rows;
use opforge::linalg::{c, CMat};
use opforge::maps::transpose_map;
use opforge::space::{build_linfty, full_algebra, make_space, AmbientSignature};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn opforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn put(dir: &Path, name: &str, v: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v).unwrap();
    p.display().to_string()
}

fn matrix(m: &CMat) -> String {
    serde_json::to_string(&mat_to_rows(m)).unwrap()
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn norm_of_level_two_element() {
    let d = tmp();
    let s = put(d.path(), "s.json", &build_linfty(2).to_json());
    let e = json!({"level": 2, "coeffs": [
        [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]],
        [[[0.0, 0.0], [2.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
    ]});
    let e = put(d.path(), "e.json", &e.to_string());
    let o = opforge(&["norm", "--space", &s, "--element", &e, "--level", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!((v["bound"]["upper"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(v["bound"]["upper_certificate"]["kind"], "exact");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = opforge(&["norm", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(opforge(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one_with_json() {
    let d = tmp();
    let s = put(d.path(), "s.json", &build_linfty(2).to_json());
    let e = put(d.path(), "e.json", "[[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]");
    let o = opforge(&["norm", "--space", &s, "--element", &e]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["error"], "DimensionMismatch");
    let o = opforge(&["norm", "--space", "/nonexistent.json", "--element", &e]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ruan_check_is_reproducible() {
    let args = ["check", "--suite", "ruan", "--seed", "7", "--samples", "100", "--count", "5"];
    let a = opforge(&args);
    let b = opforge(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout_json(&a)["pass"], true);
}

#[test]
fn solver_check_passes() {
    let o = opforge(&["check", "--suite", "solver", "--count", "10", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout_json(&o)["max_gap"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn transpose_cb_norm() {
    let d = tmp();
    let m2 = put(d.path(), "m2.json", &full_algebra(2).to_json());
    let t = put(d.path(), "t.json", &transpose_map(2).to_json());
    let o = opforge(&["mapnorm", "--domain", &m2, "--codomain", &m2, "--map", &t, "--cb"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!(v["bound"]["lower"].as_f64().unwrap() <= 2.0 + 1e-9);
    assert!(v["bound"]["upper"].as_f64().unwrap() >= 2.0 - 1e-9);
    let o = opforge(&["mapnorm", "--domain", &m2, "--codomain", &m2, "--map", &t, "--level", "1"]);
    let b = &stdout_json(&o)["bound"];
    assert!(b["lower"].as_f64().unwrap() >= 1.0 - 1e-9 && b["upper"].as_f64().unwrap() >= 1.0);
}

#[test]
fn distance_between_lines() {
    let d = tmp();
    let one = |r: f64| {
        make_space(AmbientSignature(vec![1]), vec![vec![CMat::from_element(1, 1, c(r, 0.0))]])
            .unwrap()
            .to_json()
    };
    let a = put(d.path(), "a.json", &one(1.0));
    let b = put(d.path(), "b.json", &one(1.5));
    let o = opforge(&["dist", "--a", &a, "--b", &b, "--level", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!(v["d_lower"].as_f64().unwrap() <= 0.5 + 1e-9);
    assert!(v["d_upper"].as_f64().unwrap() >= 0.5 - 1e-9);
    assert!(v["d_upper"].as_f64().unwrap() - v["d_lower"].as_f64().unwrap() <= 1e-4);
}

fn amalgam_inputs(d: &Path) -> (String, String, String, String) {
    let x = put(d, "x.json", &build_linfty(2).to_json());
    let sub = put(d, "sub.json", &matrix(&CMat::from_fn(2, 1, |i, _| c(if i == 0 { 1.0 } else { 0.0 }, 0.0))));
    let y = put(d, "y.json", &full_algebra(2).to_json());
    let f = put(d, "f.json", &matrix(&CMat::from_fn(4, 1, |i, _| c(if i == 0 { 1.0 } else { 0.0 }, 0.0))));
    (x, sub, y, f)
}

#[test]
fn exact_amalgamation_with_manifest() {
    let d = tmp();
    let (x, sub, y, f) = amalgam_inputs(d.path());
    let out = d.path().join("z.json").display().to_string();
    let man = d.path().join("m.json").display().to_string();
    let o = opforge(&[
        "amalgamate", "--x", &x, "--x-sub", &sub, "--y", &y, "--map", &f, "--out", &out, "--manifest", &man,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!(v["isometry_defect0"].as_f64().unwrap() <= 1e-9);
    assert!(v["agreement_defect"].as_f64().unwrap() <= 1e-9);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&man).unwrap()).unwrap();
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["schema"], "opforge-v1");
    assert!(PathBuf::from(out).exists());
}

#[test]
fn staged_amalgamation_log() {
    let d = tmp();
    let (x, sub, y, f) = amalgam_inputs(d.path());
    let log = d.path().join("log.jsonl").display().to_string();
    let o = opforge(&[
        "amalgamate", "--x", &x, "--x-sub", &sub, "--y", &y, "--map", &f, "--eps", "0.5", "--stages", "2", "--log", &log,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["all_hold"], true);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
}

#[test]
fn pushout_check_on_basis() {
    let d = tmp();
    let (_, _, y, _) = amalgam_inputs(d.path());
    let x = put(d.path(), "x1.json", &build_linfty(1).to_json());
    let f = put(d.path(), "f1.json", &matrix(&CMat::from_fn(4, 1, |i, _| c(if i == 0 { 1.0 } else { 0.0 }, 0.0))));
    let o = opforge(&["pushout-check", "--x", &x, "--y", &y, "--map", &f]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["all_consistent"], true);
}

#[test]
fn short_chain_writes_ledger() {
    let d = tmp();
    let out = d.path().join("run").display().to_string();
    let o = opforge(&[
        "chain", "--mode", "mn", "--level", "1", "--steps", "4", "--seed", "1", "--snapshot-every", "2", "--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = std::fs::read_to_string(Path::new(&out).join("ledger.jsonl")).unwrap();
    assert!(ledger.lines().count() >= 1);
    assert!(Path::new(&out).join("snapshot-00002.json").exists());
}

#[test]
fn exactness_of_linfty() {
    let d = tmp();
    let s = put(d.path(), "s.json", &build_linfty(2).to_json());
    let o = opforge(&["exactness", "--space", &s, "--n-max", "2"]);
    assert_eq!(o.status.code(), Some(0));
    for b in stdout_json(&o)["bounds"].as_array().unwrap() {
        assert!(b["lower"].as_f64().unwrap() <= 1.0 + 1e-6 && b["upper"].as_f64().unwrap() >= 1.0 - 1e-6);
    }
}

#[test]
fn quotient_norm_and_l1_concretization() {
    let d = tmp();
    let q = json!({"kind": "quotient", "parent": serde_json::from_str::<Value>(&build_linfty(2).to_json()).unwrap(),
        "kernel": [[[1.0, 0.0], [-1.0, 0.0]]]});
    let s = put(d.path(), "q.json", &q.to_string());
    let e = put(d.path(), "e.json", "[[1.0, 0.0]]");
    let o = opforge(&["norm", "--space", &s, "--element", &e]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = &stdout_json(&o)["bound"];
    assert!(b["lower"].as_f64().unwrap() <= b["upper"].as_f64().unwrap());
    let l1 = put(d.path(), "l1.json", r#"{"kind": "l1", "k": 2}"#);
    let o = opforge(&["concretize", "--space", &l1, "--level", "1", "--eps", "0.05"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["target_met"], true);
}
