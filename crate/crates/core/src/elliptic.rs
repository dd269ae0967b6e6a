//! Steady Neumann problems and the translating pair `(s, u_ell)` with
//! `sigma_k/sigma_l (D^2 u) = f e^s`, `u_nu = phi`.
//!
//! The pair is reached through the family `f e^{s + eps u}`. For fixed `eps`
//! the solutions satisfy `u_{eps,s} = u_{eps,0} - s/eps`, so one steady solve
//! per `eps` gives the normalized speed `s_eps` in closed form. The trace is
//! extrapolated to `eps = 0` and the last profile is polished by a Newton
//! solve of the discrete pair.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::discretize::DiscError;
use crate::exprparse::{Env, ExprError, Var};
use crate::flow::{Flow, FlowError, FlowSettings, ProblemSpec, StopReason, StopRule};
use crate::geometry::{osc_difference, GeomError, Grid, GridFn, Point};
use crate::linsolve::{SolveError, SparseSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EllipticError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("steady state not reached ({reason}): max |u_t| = {residual:e}")]
    NotSteady { reason: String, residual: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("expression: {0}")]
    Expr(#[from] ExprError),
}

/// Pseudo-time settings for steady solves: the implicit step starts small
/// and doubles until the scheme is a plain Newton iteration.
pub fn steady_settings(base: &FlowSettings) -> FlowSettings {
    FlowSettings {
        dt_start: Some(0.05),
        dt: 1e6,
        tol_steady: 1e-8,
        t_max: f64::INFINITY,
        max_steps: 500,
        checkpoint_every: 0,
        ..base.clone()
    }
}

#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub u: GridFn,
    pub residual: f64,
    pub steps: usize,
}

fn require_classical(spec: &ProblemSpec) -> Result<(), EllipticError> {
    if spec.phi.uses(Var::U) {
        return Err(EllipticError::Invalid(
            "phi must not depend on u for the elliptic solvers".into(),
        ));
    }
    Ok(())
}

/// Steady state of the flow for `f e^{s + eps u}`, started from `start` or
/// from the projected `u0`.
pub fn solve_family(
    spec: &ProblemSpec,
    grid: &Arc<Grid>,
    eps: f64,
    s: f64,
    settings: &FlowSettings,
    start: Option<&GridFn>,
) -> Result<SteadySolution, EllipticError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(EllipticError::Invalid(format!("eps must be positive, got {eps}")));
    }
    require_classical(spec)?;
    let flow = Flow::new(spec.regularized(eps, s), grid.clone(), settings.clone())?;
    let (u, compat) = match start {
        Some(u) => {
            let mut v = u.values().to_vec();
            flow.closure().close_in_place(&mut v, flow.spec().phi_fn())?;
            let mut u = GridFn::new(grid.clone(), v)?;
            u.mark_closed();
            (u, 0.0)
        }
        None => flow.initial_field()?,
    };
    let out = flow.run_from(flow.state_from(u), compat, StopRule::Steady)?;
    let last = out.last();
    let residual = last.max_ut.abs().max(last.min_ut.abs());
    if out.stop != StopReason::Steady {
        return Err(EllipticError::NotSteady {
            reason: out
                .message
                .clone()
                .unwrap_or_else(|| out.stop.as_str().to_string()),
            residual,
        });
    }
    Ok(SteadySolution {
        u: out.state.field(),
        residual,
        steps: out.state.step_count,
    })
}

/// `u_{eps,0}`: steady solution for `f e^{eps u}`.
pub fn solve_regularized(
    spec: &ProblemSpec,
    grid: &Arc<Grid>,
    eps: f64,
    settings: &FlowSettings,
) -> Result<SteadySolution, EllipticError> {
    solve_family(spec, grid, eps, 0.0, settings, None)
}

/// `eps (u_{eps,0}(y0) - u0(y0))`.
pub fn s_epsilon(u_eps0: &GridFn, u0: &GridFn, eps: f64, y0: Point) -> Result<f64, EllipticError> {
    Ok(eps * (u_eps0.at(y0)? - u0.at(y0)?))
}

/// `1 + max|log f| + max|u0| + max|log quotient(D^2 u0)|` over the grid.
pub fn s_bound(spec: &ProblemSpec, grid: &Arc<Grid>) -> Result<f64, EllipticError> {
    let flow = Flow::new(spec.regularized(0.0, 0.0), grid.clone(), FlowSettings::default())?;
    let (u, _) = flow.initial_field()?;
    let mut log_f = 0.0f64;
    for &p in grid.points() {
        log_f = log_f.max(spec.f.eval(&Env::at(p))?.ln().abs());
    }
    let log_q = flow
        .eval_all(u.values())?
        .iter()
        .fold(0.0f64, |m, e| m.max(e.quotient.ln().abs()));
    Ok(1.0 + log_f + u.max_abs() + log_q)
}

/// `log(boundary integral of phi / area integral of f)`, the speed of the
/// Laplace case.
pub fn laplace_speed_oracle(spec: &ProblemSpec) -> Result<f64, EllipticError> {
    if spec.q.k() != 1 || spec.q.l() != 0 {
        return Err(EllipticError::Invalid("the oracle needs k = 1, l = 0".into()));
    }
    if spec.phi.uses(Var::U) || spec.f.uses(Var::U) {
        return Err(EllipticError::Invalid("f and phi must not depend on u".into()));
    }
    let err = std::cell::RefCell::new(None);
    let eval = |e: &crate::exprparse::Expr, x: Point| match e.eval(&Env::at(x)) {
        Ok(v) => v,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let flux = spec.domain.boundary_integral(|x| eval(&spec.phi, x), 4096);
    let mass = spec.domain.area_integral(|x| eval(&spec.f, x), 64);
    if let Some(e) = err.into_inner() {
        return Err(e.into());
    }
    if !(flux > 0.0 && mass > 0.0) {
        return Err(EllipticError::Invalid(format!(
            "integrals must be positive: boundary {flux}, area {mass}"
        )));
    }
    Ok((flux / mass).ln())
}

/// `osc(u_a - u_b)`.
pub fn check_uniqueness_up_to_constant(u_a: &GridFn, u_b: &GridFn) -> f64 {
    osc_difference(u_a, u_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSettings {
    pub eps0: f64,
    /// Levels `j = 0..=levels` of `eps_j = eps0 2^{-j}`.
    pub levels: usize,
    /// Normalization point; the origin when unset.
    pub y0: Option<Point>,
    pub flow: FlowSettings,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            eps0: 1.0,
            levels: 6,
            y0: None,
            flow: steady_settings(&FlowSettings::default()),
            newton_tol: 1e-9,
            newton_max_iter: 30,
        }
    }
}

impl EigenSettings {
    pub fn schedule(&self) -> Vec<f64> {
        (0..=self.levels)
            .map(|j| self.eps0 * 0.5f64.powi(j as i32))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenStatus {
    Ok,
    /// The trace is not monotone or its increments do not shrink.
    ConvergenceFailure,
    ResidualExceeded,
}

impl EigenStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EigenStatus::Ok => "ok",
            EigenStatus::ConvergenceFailure => "convergence_failure",
            EigenStatus::ResidualExceeded => "residual_exceeded",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    /// Extrapolated speed.
    pub s: f64,
    /// Speed of the discrete pair after the Newton polish.
    pub s_discrete: f64,
    pub u_ell: GridFn,
    pub y0: Point,
    pub epsilon_trace: Vec<(f64, f64)>,
    /// Successive increment ratios of the trace.
    pub ratios: Vec<f64>,
    /// `max |log quotient(D^2 u_ell) - log f - s|` over the interior.
    pub residual: f64,
    pub residual_limit: f64,
    pub bound: f64,
    pub status: EigenStatus,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenSummary {
    pub s_hat: f64,
    pub epsilon_trace: Vec<[f64; 2]>,
    pub residual: f64,
    pub oracle_s: Option<f64>,
    pub status: EigenStatus,
    pub s_discrete: f64,
    pub residual_limit: f64,
    pub ratios: Vec<f64>,
    pub y0: [f64; 2],
    pub bound: f64,
    pub warnings: Vec<String>,
}

impl EigenPair {
    pub fn summary(&self, oracle_s: Option<f64>) -> EigenSummary {
        EigenSummary {
            s_hat: self.s,
            epsilon_trace: self.epsilon_trace.iter().map(|&(e, s)| [e, s]).collect(),
            residual: self.residual,
            oracle_s,
            status: self.status,
            s_discrete: self.s_discrete,
            residual_limit: self.residual_limit,
            ratios: self.ratios.clone(),
            y0: self.y0,
            bound: self.bound,
            warnings: self.warnings.clone(),
        }
    }
}

/// Trace diagnostics: increment ratios and whether the increments keep one
/// sign and shrink (increments below `noise` are ignored).
pub fn trace_check(trace: &[(f64, f64)], noise: f64) -> (Vec<f64>, bool) {
    let d: Vec<f64> = trace.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let ratios = d
        .windows(2)
        .filter(|w| w[0].abs() > noise)
        .map(|w| w[1] / w[0])
        .collect();
    let big: Vec<f64> = d.iter().copied().filter(|v| v.abs() > noise).collect();
    let monotone = big.windows(2).all(|w| w[0].signum() == w[1].signum());
    let shrinking = d.windows(2).all(|w| w[1].abs() <= w[0].abs() + noise);
    (ratios, monotone && shrinking)
}

/// `2 s_J - s_{J-1}` for a halving schedule.
pub fn richardson(trace: &[(f64, f64)]) -> Option<f64> {
    match trace {
        [] => None,
        [(_, s)] => Some(*s),
        [.., (e1, s1), (e2, s2)] => Some(s2 + (s2 - s1) * e2 / (e1 - e2)),
    }
}

pub fn solve_eigenpair(
    spec: &ProblemSpec,
    grid: &Arc<Grid>,
    settings: &EigenSettings,
) -> Result<EigenPair, EllipticError> {
    require_classical(spec)?;
    if spec.f.uses(Var::U) {
        return Err(EllipticError::Invalid(
            "f must not depend on u for the translating pair".into(),
        ));
    }
    let base = spec.regularized(0.0, 0.0);
    let y0 = settings.y0.unwrap_or([0.0, 0.0]);
    if !spec.domain.contains(y0) {
        return Err(EllipticError::Invalid(format!(
            "y0 = ({}, {}) is outside the domain",
            y0[0], y0[1]
        )));
    }
    let bound = s_bound(&base, grid)?;
    let u0_raw = {
        let mut v = Vec::with_capacity(grid.len());
        for &p in grid.points() {
            v.push(base.u0.eval(&Env::at(p))?);
        }
        GridFn::new(grid.clone(), v)?
    };
    let target = u0_raw.at(y0)?;

    let mut warnings = Vec::new();
    let mut trace = Vec::new();
    let mut guess = 0.0;
    let mut prev: Option<GridFn> = None;
    for eps in settings.schedule() {
        // solve at the current speed guess so stored values stay O(1)
        let sol = solve_family(&base, grid, eps, guess, &settings.flow, prev.as_ref())?;
        let shifted = sol.u.values().iter().map(|v| v + guess / eps).collect();
        let u_eps0 = GridFn::new(grid.clone(), shifted)?;
        let s = s_epsilon(&u_eps0, &u0_raw, eps, y0)?;
        if !(s.abs() < bound) {
            warnings.push(format!("s_eps = {s} at eps = {eps} is outside (-{bound}, {bound})"));
        }
        trace.push((eps, s));
        guess = s;
        prev = Some(sol.u);
    }
    let s_hat = richardson(&trace).expect("nonempty schedule");
    let noise = 1e-9 * (1.0 + s_hat.abs());
    let (ratios, trace_ok) = trace_check(&trace, noise);

    // profile of the last level, normalized at y0
    let last = prev.expect("nonempty schedule");
    let shift = last.at(y0)? - target;
    let profile: Vec<f64> = last.values().iter().map(|v| v - shift).collect();
    let (u_ell, s_discrete) = match polish(&base, grid, profile.clone(), s_hat, y0, target, settings) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("Newton polish failed: {e}"));
            let mut u = GridFn::new(grid.clone(), profile)?;
            u.mark_closed();
            (u, guess)
        }
    };

    let flow = Flow::new(base.clone(), grid.clone(), FlowSettings::default())?;
    let residual = flow
        .eval_all(u_ell.values())?
        .iter()
        .fold(0.0f64, |m, e| m.max((e.ut - s_hat).abs()));
    let h = grid.h();
    let residual_limit = 10.0 * h * h * (1.0 + s_hat.abs());
    let status = if !trace_ok {
        EigenStatus::ConvergenceFailure
    } else if residual > residual_limit {
        EigenStatus::ResidualExceeded
    } else {
        EigenStatus::Ok
    };
    Ok(EigenPair {
        s: s_hat,
        s_discrete,
        u_ell,
        y0,
        epsilon_trace: trace,
        ratios,
        residual,
        residual_limit,
        bound,
        status,
        warnings,
    })
}

/// Newton iteration on `(u, s)` for `log q(D^2 u) - log f = s`, the boundary
/// relation and `u(y0) = target`.
fn polish(
    spec: &ProblemSpec,
    grid: &Arc<Grid>,
    start: Vec<f64>,
    s_start: f64,
    y0: Point,
    target: f64,
    settings: &EigenSettings,
) -> Result<(GridFn, f64), EllipticError> {
    let flow = Flow::new(spec.clone(), grid.clone(), settings.flow.clone())?;
    let n = grid.len();
    let weights = grid.interpolation_weights(y0)?;
    let mut pattern = flow.pattern();
    pattern.extend(grid.interior().iter().map(|&p| (p, n)));
    pattern.extend(weights.iter().map(|&(i, _)| (n, i)));
    let system = SparseSystem::new(n + 1, &pattern)?;

    let residuals = |u: &[f64], s: f64| -> Result<(Vec<f64>, f64), EllipticError> {
        let evals = flow.eval_all(u)?;
        let mut r = vec![0.0; n + 1];
        for (&p, e) in grid.interior().iter().zip(&evals) {
            r[p] = e.ut - s;
        }
        let b = flow.closure().residuals(u, flow.spec().phi_fn())?;
        for (row, v) in flow.closure().rows().iter().zip(b) {
            r[row.node] = v;
        }
        r[n] = weights.iter().map(|&(i, w)| w * u[i]).sum::<f64>() - target;
        let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok((r, norm))
    };

    let (mut u, mut s) = (start, s_start);
    let (mut r, mut norm) = residuals(&u, s)?;
    let tol = settings.newton_tol * (1.0 + s.abs());
    let mut iter = 0;
    while norm > tol {
        if iter == settings.newton_max_iter {
            return Err(EllipticError::NotSteady {
                reason: "Newton polish did not converge".into(),
                residual: norm,
            });
        }
        iter += 1;
        let evals = flow.eval_all(&u)?;
        let mut vals = flow.matrix_values(&u, &evals, 0.0)?;
        vals.extend(std::iter::repeat_n(1.0, grid.interior().len()));
        vals.extend(weights.iter().map(|e| e.1));
        let mut rhs = vec![0.0; n + 1];
        for &p in grid.interior() {
            rhs[p] = r[p];
        }
        for &p in grid.boundary() {
            rhs[p] = -r[p];
        }
        rhs[n] = -r[n];
        let delta = system.solve(&vals, &rhs)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            let s_trial = s + lambda * delta[n];
            match residuals(&trial, s_trial) {
                Ok((r_new, n_new)) if n_new < norm || lambda < 1e-3 => {
                    if !(n_new < norm) {
                        return Err(EllipticError::NotSteady {
                            reason: "Newton polish stalled".into(),
                            residual: norm,
                        });
                    }
                    u = trial;
                    s = s_trial;
                    r = r_new;
                    norm = n_new;
                    break;
                }
                Ok(_) | Err(EllipticError::Flow(FlowError::Inadmissible { .. })) => lambda *= 0.5,
                Err(e) => return Err(e),
            }
            if lambda < 1e-3 {
                return Err(EllipticError::NotSteady {
                    reason: "Newton polish left the admissible set".into(),
                    residual: norm,
                });
            }
        }
    }
    let mut out = GridFn::new(grid.clone(), u)?;
    out.mark_closed();
    Ok((out, s))
}

/// Largest `|u_t - s|` over a flow run from `u_ell` up to `t_end`.
pub fn translating_defect(
    spec: &ProblemSpec,
    grid: &Arc<Grid>,
    pair: &EigenPair,
    t_end: f64,
    settings: &FlowSettings,
) -> Result<f64, EllipticError> {
    let settings = FlowSettings {
        t_max: t_end,
        checkpoint_every: 0,
        ..settings.clone()
    };
    let flow = Flow::new(spec.regularized(0.0, 0.0), grid.clone(), settings)?;
    let out = flow.run_from(flow.state_from(pair.u_ell.clone()), 0.0, StopRule::Horizon)?;
    if out.stop == StopReason::Diverged {
        return Err(EllipticError::NotSteady {
            reason: "flow from the profile diverged".into(),
            residual: f64::NAN,
        });
    }
    Ok(out.records.iter().fold(0.0f64, |m, r| {
        m.max((r.max_ut - pair.s).abs()).max((r.min_ut - pair.s).abs())
    }))
}
