//! Command drivers behind the `hqflow` binary. Each writes its artifacts to
//! an output directory and returns the process exit code.
//!
//! Exit codes: 0 success, 1 failed checks, 2 invalid input, 3 divergence or
//! solver failure, 4 `t_max` reached, 5 non-Cauchy speed trace.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::elliptic::{laplace_speed_oracle, solve_eigenpair, EigenStatus};
use crate::exec::Exec;
use crate::exprparse::{parse_for, Env, Slot};
use crate::flow::{
    check_run, fit_decay_rate, Check, Flow, FlowError, FlowSettings, StopReason, StopRule,
    worst_osc_increase, MONITOR_HEADER,
};
use crate::geometry::{Grid, GridFn};
use crate::verify::{run_suite, SigmaImpl};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_HORIZON: i32 = 4;
pub const EXIT_NON_CAUCHY: i32 = 5;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Invalid(_) => EXIT_INVALID,
            CommandError::Runtime(_) | CommandError::Io(_) => EXIT_DIVERGED,
        }
    }
}

impl From<FlowError> for CommandError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Invalid(m) => CommandError::Invalid(m),
            other => CommandError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub code: i32,
    /// One-line human summary.
    pub message: String,
    pub files: Vec<PathBuf>,
}

/// Metadata carried by every artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub config_hash: String,
    pub grid: String,
    pub outside_theory: bool,
}

impl Meta {
    fn of(cfg: &RunConfig, grid: &Grid) -> Self {
        Self {
            config_hash: cfg.hash.clone(),
            grid: grid.describe().replace(' ', "_"),
            outside_theory: cfg.outside_theory(),
        }
    }

    pub fn header(&self) -> String {
        format!(
            "config_hash={} grid={} outside_theory={}",
            self.config_hash,
            self.grid.replace(' ', "_"),
            self.outside_theory
        )
    }
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), CommandError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok((BufWriter::new(File::create(&path)?), path))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<PathBuf, CommandError> {
    let (mut w, path) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

fn write_field(dir: &Path, name: &str, u: &GridFn, meta: &Meta) -> Result<PathBuf, CommandError> {
    let (mut w, path) = create(dir, name)?;
    u.write_csv(&mut w, Some(&meta.header()))?;
    w.flush()?;
    Ok(path)
}

fn grid_of(cfg: &RunConfig) -> Result<Arc<Grid>, CommandError> {
    cfg.grid()
        .map(Arc::new)
        .map_err(|e| CommandError::Invalid(format!("grid.n1: {e}")))
}

/// `max |u - u_exact|` over the nodes.
fn exact_error(u: &GridFn, src: &str) -> Result<f64, CommandError> {
    let expr = parse_for(src, Slot::U0).map_err(|e| CommandError::Invalid(format!("problem.u_exact: {e}")))?;
    let mut worst = 0.0f64;
    for (p, v) in u.grid().points().iter().zip(u.values()) {
        let exact = expr
            .eval(&Env::at(*p))
            .map_err(|e| CommandError::Invalid(format!("problem.u_exact: {e}")))?;
        worst = worst.max((v - exact).abs());
    }
    Ok(worst)
}

struct FlowRun {
    summary: Value,
    stop: StopReason,
    state_field: GridFn,
    monitors: String,
    error: Option<f64>,
}

fn run_flow(cfg: &RunConfig, grid: Arc<Grid>, settings: FlowSettings) -> Result<FlowRun, CommandError> {
    let meta = Meta::of(cfg, &grid);
    let flow = Flow::new(cfg.spec.clone(), grid, settings)?;
    let warnings = flow.validate()?;
    let out = flow.run(cfg.stop)?;
    let mut monitors = format!("# {}\n{MONITOR_HEADER}\n", meta.header());
    for r in &out.records {
        monitors.push_str(&r.csv_row());
        monitors.push('\n');
    }
    let last = out.last();
    let field = out.state.field();
    let error = cfg.u_exact.as_deref().map(|s| exact_error(&field, s)).transpose()?;
    let checks: Vec<Check> = check_run(&out, flow.spec().c_f());
    let summary = json!({
        "meta": meta,
        "stop_reason": out.stop.as_str(),
        "t": out.state.t,
        "steps": out.state.step_count,
        "rejected_steps": out.rejected_steps,
        "final_max_abs_ut": last.max_ut.abs().max(last.min_ut.abs()),
        "final_osc_ut": last.max_ut - last.min_ut,
        "speed": out.speed(),
        "decay_rate": fit_decay_rate(&out.records),
        "m0": out.initial.m0,
        "c2": out.initial.c2,
        "compat_residual": out.initial.compat_residual,
        "initial_max_ut": out.initial.max_ut,
        "initial_min_ut": out.initial.min_ut,
        "checkpoints": out.checkpoints.iter().map(|c| [c.t, c.osc]).collect::<Vec<_>>(),
        "worst_osc_increase": (out.checkpoints.len() >= 2).then(|| worst_osc_increase(&out.checkpoints)),
        "checks": checks,
        "error_vs_exact": error,
        "warnings": warnings,
        "message": out.message,
    });
    Ok(FlowRun {
        summary,
        stop: out.stop,
        state_field: field,
        monitors,
        error,
    })
}

fn flow_exit(stop: StopReason, rule: StopRule) -> i32 {
    match stop {
        StopReason::Steady | StopReason::Translating => EXIT_OK,
        StopReason::Diverged => EXIT_DIVERGED,
        StopReason::Horizon if rule == StopRule::Horizon => EXIT_OK,
        StopReason::Horizon => EXIT_HORIZON,
    }
}

/// Runs the flow to its stop rule; writes `monitors.csv`, `final.csv` and
/// `summary.json`.
pub fn cmd_flow(cfg: &RunConfig, out_dir: &Path) -> Result<CommandOutcome, CommandError> {
    let grid = grid_of(cfg)?;
    let meta = Meta::of(cfg, &grid);
    let run = run_flow(cfg, grid, cfg.flow.clone())?;
    let (mut w, monitors) = create(out_dir, "monitors.csv")?;
    w.write_all(run.monitors.as_bytes())?;
    w.flush()?;
    let fin = write_field(out_dir, "final.csv", &run.state_field, &meta)?;
    let summary = write_json(out_dir, "summary.json", &run.summary)?;
    Ok(CommandOutcome {
        code: flow_exit(run.stop, cfg.stop),
        message: format!(
            "stop={} t={} decay_rate={}",
            run.stop.as_str(),
            run.summary["t"],
            run.summary["decay_rate"]
        ),
        files: vec![monitors, fin, summary],
    })
}

/// Solves for the translating pair; writes `summary.json` and `profile.csv`.
pub fn cmd_eigen(cfg: &RunConfig, out_dir: &Path) -> Result<CommandOutcome, CommandError> {
    let grid = grid_of(cfg)?;
    let meta = Meta::of(cfg, &grid);
    let pair = solve_eigenpair(&cfg.spec, &grid, &cfg.eigen).map_err(|e| match e {
        crate::elliptic::EllipticError::Invalid(m) => CommandError::Invalid(m),
        crate::elliptic::EllipticError::Flow(f) => f.into(),
        other => CommandError::Runtime(other.to_string()),
    })?;
    let oracle = if cfg.spec.q.k() == 1 && cfg.spec.q.l() == 0 {
        laplace_speed_oracle(&cfg.spec).ok()
    } else {
        None
    };
    let mut summary = serde_json::to_value(pair.summary(oracle)).map_err(std::io::Error::from)?;
    summary["meta"] = serde_json::to_value(&meta).map_err(std::io::Error::from)?;
    let s = write_json(out_dir, "summary.json", &summary)?;
    let profile = write_field(out_dir, "profile.csv", &pair.u_ell, &meta)?;
    let code = match pair.status {
        EigenStatus::Ok => EXIT_OK,
        EigenStatus::ConvergenceFailure => EXIT_NON_CAUCHY,
        EigenStatus::ResidualExceeded => EXIT_DIVERGED,
    };
    Ok(CommandOutcome {
        code,
        message: format!(
            "s_hat={} residual={:e} status={}",
            pair.s,
            pair.residual,
            pair.status.as_str()
        ),
        files: vec![s, profile],
    })
}

/// Runs the property suite; writes `verify.json`.
pub fn cmd_verify(
    seed: u64,
    trials: usize,
    shadow: bool,
    exec: Exec,
    out_dir: &Path,
) -> Result<CommandOutcome, CommandError> {
    let sig = if shadow { SigmaImpl::Shadow } else { SigmaImpl::Reference };
    let report = run_suite(seed, trials, sig, exec);
    let hash = Sha256::digest(format!("seed={seed}\ntrials={trials}\nshadow={shadow}\n").as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    let meta = Meta {
        config_hash: hash,
        grid: "none".into(),
        outside_theory: false,
    };
    let mut value = serde_json::to_value(&report).map_err(std::io::Error::from)?;
    value["meta"] = serde_json::to_value(&meta).map_err(std::io::Error::from)?;
    let path = write_json(out_dir, "verify.json", &value)?;
    let failed: Vec<&str> = report
        .properties
        .iter()
        .filter(|p| !p.pass)
        .map(|p| p.name)
        .collect();
    Ok(CommandOutcome {
        code: if report.all_pass { EXIT_OK } else { EXIT_FAILED },
        message: if failed.is_empty() {
            format!("{} properties pass", report.properties.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
        files: vec![path],
    })
}

/// Grid levels `(n1 2^i, n2 2^i)` for `i < levels`.
pub fn doubling_levels(base: (usize, usize), levels: usize) -> Vec<(usize, usize)> {
    (0..levels).map(|i| (base.0 << i, base.1 << i)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelResult {
    pub resolution: (usize, usize),
    pub h: f64,
    pub error: f64,
    pub stop: &'static str,
}

/// Observed orders `log(e_i/e_{i+1}) / log(h_i/h_{i+1})`.
pub fn observed_orders(levels: &[LevelResult]) -> Vec<f64> {
    levels
        .windows(2)
        .map(|w| (w[0].error / w[1].error).ln() / (w[0].h / w[1].h).ln())
        .collect()
}

pub const ORDER_RANGE: (f64, f64) = (1.5, 2.5);

/// Manufactured-solution order study; writes `converge.json`.
pub fn cmd_converge(
    cfg: &RunConfig,
    resolutions: &[(usize, usize)],
    out_dir: &Path,
) -> Result<CommandOutcome, CommandError> {
    if resolutions.len() < 2 {
        return Err(CommandError::Invalid("need at least two grid levels".into()));
    }
    for (i, r) in resolutions.iter().enumerate() {
        if resolutions[..i].contains(r) {
            return Err(CommandError::Invalid(format!(
                "grid level {}x{} requested twice",
                r.0, r.1
            )));
        }
    }
    let Some(exact) = cfg.u_exact.clone() else {
        return Err(CommandError::Config(ConfigError::Field {
            key: "problem.u_exact".into(),
            message: "required by converge".into(),
        }));
    };
    let mut results = Vec::new();
    let mut meta = None;
    for &res in resolutions {
        let level = RunConfig {
            resolution: res,
            u_exact: Some(exact.clone()),
            ..cfg.clone()
        };
        let grid = grid_of(&level)?;
        meta.get_or_insert_with(|| Meta::of(cfg, &grid));
        let h = grid.h();
        let run = run_flow(&level, grid, level.flow.clone())?;
        let code = flow_exit(run.stop, cfg.stop);
        if code != EXIT_OK {
            return Ok(CommandOutcome {
                code,
                message: format!("level {}x{} stopped: {}", res.0, res.1, run.stop.as_str()),
                files: vec![],
            });
        }
        results.push(LevelResult {
            resolution: res,
            h,
            error: run.error.expect("exact solution given"),
            stop: run.stop.as_str(),
        });
    }
    let orders = observed_orders(&results);
    let pass = orders
        .iter()
        .all(|o| (ORDER_RANGE.0..=ORDER_RANGE.1).contains(o));
    let mut meta = meta.expect("at least two levels");
    meta.grid = resolutions
        .iter()
        .map(|r| format!("{}x{}", r.0, r.1))
        .collect::<Vec<_>>()
        .join(",");
    let value = json!({
        "meta": meta,
        "levels": results,
        "orders": orders,
        "order_range": [ORDER_RANGE.0, ORDER_RANGE.1],
        "pass": pass,
    });
    let path = write_json(out_dir, "converge.json", &value)?;
    Ok(CommandOutcome {
        code: if pass { EXIT_OK } else { EXIT_FAILED },
        message: format!("orders={orders:?}"),
        files: vec![path],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_of_exact_quadratic_decay() {
        let lv = |h: f64| LevelResult {
            resolution: (1, 1),
            h,
            error: 3.0 * h * h,
            stop: "steady",
        };
        let o = observed_orders(&[lv(0.1), lv(0.05), lv(0.025)]);
        assert!(o.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn doubling() {
        assert_eq!(doubling_levels((8, 16), 3), vec![(8, 16), (16, 32), (32, 64)]);
    }

    #[test]
    fn header_has_no_spaces_in_values() {
        let m = Meta {
            config_hash: "ab".into(),
            grid: "polar 8x16".into(),
            outside_theory: true,
        };
        assert_eq!(m.header(), "config_hash=ab grid=polar_8x16 outside_theory=true");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(flow_exit(StopReason::Steady, StopRule::Steady), 0);
        assert_eq!(flow_exit(StopReason::Horizon, StopRule::Steady), 4);
        assert_eq!(flow_exit(StopReason::Horizon, StopRule::Horizon), 0);
        assert_eq!(flow_exit(StopReason::Diverged, StopRule::Translating), 3);
        assert_eq!(CommandError::Invalid("x".into()).exit_code(), 2);
    }
}
