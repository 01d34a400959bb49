use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn rrr(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrr"))
        .env_remove("RRR_OUT_DIR")
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn runs(root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir() && !p.file_name().unwrap().to_str().unwrap().starts_with('.'))
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rrr(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_config_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"t_end\": 1.0,\n  \"tend\": 2\n}\n").unwrap();
    let out = dir.path().join("runs");
    let o = rrr(&out, &["--config", cfg.to_str().unwrap(), "flow"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("tend") && err.contains("line 3"), "{err}");
    assert!(!out.exists() || runs(&out).is_empty());
}

#[test]
fn unknown_instance_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rrr(dir.path(), &["linearize", "--instance", "nope"]).status.code(), Some(2));
}

#[test]
fn linearize_orthogonal_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = rrr(dir.path(), &["linearize", "--instance", "orthogonal-lines"]);
    assert!(o.status.success());
    let run = &runs(dir.path())[0];
    let rep: Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert!((rep["angles_deg"][0].as_f64().unwrap() - 90.0).abs() < 1e-9);
    for ev in rep["eigenvalues"].as_array().unwrap() {
        assert!((ev[0].as_f64().unwrap() + 1.0).abs() < 1e-9);
        assert!(ev[1].as_f64().unwrap().abs() < 1e-9);
    }
    assert_eq!(rep["checks_pass"], Value::Bool(true));
}

#[test]
fn same_config_and_seed_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["ledm", "run", "--m", "3", "--trials", "3", "--k-max", "300", "--seed", "5"];
    assert!(rrr(dir.path(), &args).status.success());
    assert!(rrr(dir.path(), &args).status.success());
    let meso = ["meso", "--samples", "5000", "--seed", "2"];
    assert!(rrr(dir.path(), &meso).status.success());
    assert!(rrr(dir.path(), &meso).status.success());
    let r = runs(dir.path());
    assert_eq!(r.len(), 4);
    for (a, b, f) in [(0, 1, "records.csv"), (2, 3, "sweep.csv"), (2, 3, "kernels.json")] {
        assert_eq!(fs::read(r[a].join(f)).unwrap(), fs::read(r[b].join(f)).unwrap(), "{f}");
    }
    assert!(!fs::read_to_string(r[0].join("records.csv")).unwrap().contains('\r'));
}

#[test]
fn runs_are_append_only_and_verifiable() {
    let dir = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        assert!(rrr(dir.path(), &["flow", "--instance", "planar-sliding", "--t-end", "2"]).status.success());
    }
    let r = runs(dir.path());
    assert_eq!(r.len(), 2);
    assert_ne!(r[0], r[1]);
    for d in &r {
        let o = rrr(dir.path(), &["verify", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    fs::write(r[0].join("trajectory.csv"), "tampered\n").unwrap();
    assert_eq!(rrr(dir.path(), &["verify", r[0].to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_rrr"))
        .env("RRR_OUT_DIR", dir.path())
        .args(["linearize"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(runs(dir.path()).len(), 1);
}

#[test]
fn standalone_output_is_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("records.csv");
    let args = ["ledm", "run", "--trials", "2", "--k-max", "100", "--out", target.to_str().unwrap()];
    assert!(rrr(dir.path(), &args).status.success());
    let before = fs::read(&target).unwrap();
    assert!(dir.path().join("records.csv.manifest.json").exists());
    assert_eq!(rrr(dir.path(), &args).status.code(), Some(2));
    assert_eq!(fs::read(&target).unwrap(), before);
}

#[test]
fn selftest_checks_the_golden_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = rrr(dir.path(), &["selftest", "--criteria", "1,11"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.contains("[PASS] golden manifest round-trip"));
    assert_eq!(rrr(dir.path(), &["selftest", "--criteria", "12"]).status.code(), Some(2));
}

#[test]
fn wdomain_reports_planar_capture() {
    let dir = tempfile::tempdir().unwrap();
    assert!(rrr(dir.path(), &["wdomain", "--x0", "1,-9"]).status.success());
    let run = &runs(dir.path())[0];
    let cap: Value = serde_json::from_slice(&fs::read(run.join("capture.json")).unwrap()).unwrap();
    assert!((cap["capture"]["entry_time"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-6);
    assert!((cap["capture"]["capture_time"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-6);
    let chain: Value = serde_json::from_slice(&fs::read(run.join("chain.json")).unwrap()).unwrap();
    assert!(chain.get("cells").is_some());
}
