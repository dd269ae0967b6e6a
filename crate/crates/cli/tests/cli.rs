use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn hqflow(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqflow"))
        .args(args)
        .env("HQFLOW_OUT", out)
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn increasing_boundary_data_exits_two() {
    let out = TempDir::new().unwrap();
    let o = hqflow(out.path(), &["flow", &config("bad_phi.toml")]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("phi_u <= c_phi < 0"), "{err}");
}

#[test]
fn inadmissible_start_exits_two() {
    let out = TempDir::new().unwrap();
    let o = hqflow(out.path(), &["flow", &config("bad_u0.toml")]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("not 1-admissible") && err.contains("at node"), "{err}");
}

#[test]
fn unknown_key_is_reported_by_path() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("typo.toml");
    std::fs::write(&path, "problem.k = 1\nproblem.f = \"1\"\nproblem.phi = \"1\"\nproblem.u0 = \"x1^2+x2^2\"\ngrid.nr = 8\n").unwrap();
    let o = hqflow(dir.path(), &["flow", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.nr"));
}

#[test]
fn missing_config_exits_two() {
    let out = TempDir::new().unwrap();
    let o = hqflow(out.path(), &["eigen", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_writes_report_and_shadow_fails() {
    let out = TempDir::new().unwrap();
    let o = hqflow(out.path(), &["verify", "--seed", "3", "--trials", "40"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.path().join("verify.json").exists());
    let o = hqflow(out.path(), &["verify", "--seed", "3", "--trials", "40", "--shadow"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flow_writes_the_three_artifacts() {
    let out = TempDir::new().unwrap();
    let o = hqflow(out.path(), &["flow", &config("manufactured_decay.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["monitors.csv", "final.csv", "summary.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
}

#[test]
fn converge_rejects_malformed_and_repeated_levels() {
    let out = TempDir::new().unwrap();
    let cfg = config("manufactured_decay.toml");
    let o = hqflow(out.path(), &["converge", &cfg, "--resolutions", "8x16,8x16"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hqflow(out.path(), &["converge", &cfg, "--resolutions", "8by16,16x32"]);
    assert_eq!(o.status.code(), Some(2));
}
