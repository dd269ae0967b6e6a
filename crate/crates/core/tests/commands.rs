use std::path::Path;

use hqflow::commands::{
    cmd_converge, cmd_eigen, cmd_flow, cmd_verify, CommandError, EXIT_FAILED, EXIT_HORIZON,
    EXIT_INVALID, EXIT_OK,
};
use hqflow::config::RunConfig;
use hqflow::exec::Exec;
use serde_json::Value;
use tempfile::TempDir;

const DISK: &str = r#"
problem.k = 1
problem.f = "1"
problem.phi = "1"
problem.u0 = "0.5*(x1^2+x2^2)"
grid.n1 = 16
flow.stop = "translating"
"#;

const MANUFACTURED: &str = r#"
problem.k = 1
problem.f = "(2-0.1*cos(x1))*exp(u-(0.5*(x1^2+x2^2)+0.1*cos(x1)))"
problem.phi = "x1^2+x2^2-0.1*x1*sin(x1) + 0.5*(x1^2+x2^2)+0.1*cos(x1) - u"
problem.u0 = "0.5*(x1^2+x2^2)"
problem.u_exact = "0.5*(x1^2+x2^2)+0.1*cos(x1)"
problem.c_phi = -1.0
problem.c_f = 1.0
grid.n1 = 8
"#;

fn parse(text: &str) -> RunConfig {
    RunConfig::parse(text).unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn flow_error(text: &str) -> CommandError {
    let dir = TempDir::new().unwrap();
    cmd_flow(&parse(text), dir.path()).unwrap_err()
}

#[test]
fn increasing_boundary_data_is_rejected_before_any_output() {
    let dir = TempDir::new().unwrap();
    let err = cmd_flow(&parse(&DISK.replace("problem.phi = \"1\"", "problem.phi = \"u\"")), dir.path())
        .unwrap_err();
    assert_eq!(err.exit_code(), EXIT_INVALID);
    assert!(err.to_string().contains("phi_u"), "{err}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn concave_initial_data_names_the_failing_node() {
    let err = flow_error(&DISK.replace("0.5*(x1^2+x2^2)", "-x1^2"));
    assert_eq!(err.exit_code(), EXIT_INVALID);
    let text = err.to_string();
    assert!(text.contains("admissible") && text.contains("node"), "{text}");
}

#[test]
fn horizon_before_steady_state_exits_four() {
    let dir = TempDir::new().unwrap();
    let cfg = parse(&format!("{MANUFACTURED}flow.t_max = 0.5\n"));
    let out = cmd_flow(&cfg, dir.path()).unwrap();
    assert_eq!(out.code, EXIT_HORIZON);
    assert_eq!(json(dir.path(), "summary.json")["stop_reason"], "t_max");
}

#[test]
fn scaling_f_shifts_the_speed_by_log_two() {
    let speed = |f: &str| {
        let dir = TempDir::new().unwrap();
        let cfg = parse(&DISK.replace("problem.f = \"1\"", &format!("problem.f = \"{f}\"")));
        assert_eq!(cmd_eigen(&cfg, dir.path()).unwrap().code, EXIT_OK);
        json(dir.path(), "summary.json")["s_hat"].as_f64().unwrap()
    };
    let base = speed("1+0.2*x1^2");
    let doubled = speed("2*(1+0.2*x1^2)");
    let shift = doubled - base;
    assert!((shift + std::f64::consts::LN_2).abs() <= 1e-6, "{shift}");
}

#[test]
fn every_artifact_carries_metadata() {
    let dir = TempDir::new().unwrap();
    let square = r#"
problem.k = 1
problem.domain = "square"
problem.f = "1"
problem.phi = "1"
problem.u0 = "0.5*(x1^2+x2^2)"
grid.n1 = 12
flow.stop = "translating"
"#;
    let out = cmd_flow(&parse(square), dir.path()).unwrap();
    assert_eq!(out.code, EXIT_OK);
    for f in &out.files {
        let text = std::fs::read_to_string(f).unwrap();
        if f.extension().unwrap() == "csv" {
            let first = text.lines().next().unwrap();
            assert!(first.starts_with("# config_hash="), "{first}");
            assert!(first.ends_with("grid=cartesian_12x12 outside_theory=true"), "{first}");
        } else {
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["meta"]["outside_theory"], true);
            assert_eq!(v["meta"]["config_hash"].as_str().unwrap().len(), 64);
        }
    }
}

#[test]
fn verify_without_trials_passes_with_a_warning() {
    let dir = TempDir::new().unwrap();
    let out = cmd_verify(1, 0, false, Exec::Sequential, dir.path()).unwrap();
    assert_eq!(out.code, EXIT_OK);
    let v = json(dir.path(), "verify.json");
    assert!(!v["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn shadow_sigma_fails_the_suite() {
    let dir = TempDir::new().unwrap();
    let out = cmd_verify(42, 50, true, Exec::default(), dir.path()).unwrap();
    assert_eq!(out.code, EXIT_FAILED);
    let v = json(dir.path(), "verify.json");
    assert_eq!(v["all_pass"], false);
    let reference = cmd_verify(42, 50, false, Exec::default(), dir.path()).unwrap();
    assert_eq!(reference.code, EXIT_OK);
}

#[test]
fn verify_output_does_not_depend_on_execution_mode() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    cmd_verify(9, 200, false, Exec::Sequential, a.path()).unwrap();
    cmd_verify(9, 200, false, Exec::Parallel, b.path()).unwrap();
    let read = |d: &TempDir| std::fs::read(d.path().join("verify.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn converge_rejects_repeated_levels() {
    let dir = TempDir::new().unwrap();
    let cfg = parse(MANUFACTURED);
    let err = cmd_converge(&cfg, &[(8, 16), (16, 32), (8, 16)], dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_INVALID);
    let err = cmd_converge(&cfg, &[(8, 16)], dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_INVALID);
    let no_exact = parse(&MANUFACTURED.replace("problem.u_exact", "# problem.u_exact"));
    let err = cmd_converge(&no_exact, &[(8, 16), (16, 32)], dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_INVALID);
}

#[test]
fn square_manufactured_order_is_second() {
    let text = r#"
problem.k = 1
problem.domain = "square"
problem.f = "(2-0.1*pi^2*cos(pi*x1))*exp(u-(0.5*(x1^2+x2^2)+0.1*cos(pi*x1)))"
problem.phi = "1 + 0.5*(x1^2+x2^2)+0.1*cos(pi*x1) - u"
problem.u0 = "0.5*(x1^2+x2^2)+0.1*cos(pi*x1)+0.02"
problem.u_exact = "0.5*(x1^2+x2^2)+0.1*cos(pi*x1)"
problem.c_phi = -1.0
problem.c_f = 1.0
"#;
    let dir = TempDir::new().unwrap();
    let out = cmd_converge(&parse(text), &[(12, 12), (24, 24), (48, 48)], dir.path()).unwrap();
    let v = json(dir.path(), "converge.json");
    assert_eq!(out.code, EXIT_OK, "{}", v["orders"]);
    assert_eq!(v["meta"]["outside_theory"], true);
}
