use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wildblender")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn default_config() -> serde_json::Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/dirac.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, v: &serde_json::Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.display().to_string()
}

#[test]
fn validate_default_and_mutations() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default_config();
    let ok = bin(&["validate", &write(dir.path(), "a.json", &cfg)]);
    assert!(ok.status.success());
    assert_eq!(stdout(&ok).trim(), "valid");

    cfg["params"]["lambda_cs1"] = serde_json::json!(0.6);
    let bad = bin(&["validate", &write(dir.path(), "b.json", &cfg)]);
    assert!(!bad.status.success());
    assert!(stdout(&bad).contains("λcs0+λcs1>1"), "{}", stdout(&bad));

    cfg["params"].as_object_mut().unwrap().remove("mu");
    let missing = bin(&["validate", &write(dir.path(), "c.json", &cfg)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("config error"));
}

#[test]
fn seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default_config();
    cfg.as_object_mut().unwrap().remove("seed");
    let o = bin(&["validate", &write(dir.path(), "a.json", &cfg)]);
    assert!(!o.status.success());
}

#[test]
fn oversized_sigma_stops_at_nesting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_config();
    let path = write(dir.path(), "a.json", &cfg);
    let out = dir.path().join("run");
    let o = bin(&["run", &path, "--sigma", "100", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("stage=nesting"));
    assert!(out.join("report.json").exists());
    assert!(out.join("series-nesting.csv").exists());
}

#[test]
fn run_then_replay_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default_config();
    cfg["skip_statistics"] = serde_json::json!(true);
    cfg["chain_depth"] = serde_json::json!(16);
    let path = write(dir.path(), "a.json", &cfg);
    let out = dir.path().join("run");
    let o = bin(&["run", &path, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("[PASS] criterion  7"));
    let report = out.join("report.json");
    let r = bin(&["replay", report.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stdout(&r));
    assert!(stdout(&r).contains("no differences"));

    let mut rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    rep["sigma"] = serde_json::json!(2.0);
    let tampered = write(dir.path(), "t.json", &rep);
    let r = bin(&["replay", &tampered]);
    assert!(!r.status.success());
    assert!(stdout(&r).contains("differs: .sigma"));

    let r = bin(&["replay", dir.path().join("missing.json").to_str().unwrap()]);
    assert!(!r.status.success());
}

#[test]
fn wasserstein_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "x,y,z\n0,0,0\n").unwrap();
    fs::write(&b, "x,y,z\n0.3,0,0\n").unwrap();
    let o = bin(&["wasserstein", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(v["solver"], "exact");
}

#[test]
fn code_listing() {
    let o = bin(&["code", "--k-max", "4", "--words"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("n0=6 b0=001000 k_start=1"));
    assert!(s.contains("w_4 = "));
    let bad = bin(&["code", "--scenario", "nope"]);
    assert!(!bad.status.success());
}
