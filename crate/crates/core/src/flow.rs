//! Time integration of `u_t = log(sigma_k/sigma_l)(D^2 u) - log f(x, u)`
//! with `u_nu = phi(x, u)`, plus the runtime monitors.
//!
//! Two steppers are available. `Scheme::Explicit` is forward Euler with the
//! parabolic step restriction. `Scheme::LinearlyImplicit` (the default)
//! solves `(I/dt - J) du = G(u)` once per step, where `J` is the linearization
//! `F^{ij} D_ij - (f_u/f)` in the interior and the linearized boundary
//! relation on the boundary. Both retry with a halved step when a node leaves
//! the cone.

use std::sync::Arc;

use thiserror::Error;

use crate::discretize::{BoundaryClosure, DiscError, Stencils};
use crate::exec::Exec;
use crate::exprparse::{parse_for, Env, Expr, ExprError, Slot, Var};
use crate::geometry::{Domain, GeomError, Grid, GridFn, Point};
use crate::linsolve::{SolveError, SparseSystem};
use crate::symmfunc::{
    d_quotient, eigen_sym, first_cone_failure, sigmas, QuotientIndices, SymMatrix, SymmError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(
        "node {node} at ({x:.6}, {y:.6}) is not admissible: sigma_{failing} = {value:e}"
    )]
    Inadmissible {
        node: usize,
        x: f64,
        y: f64,
        failing: usize,
        value: f64,
    },
    #[error("flow diverged: {0}")]
    Diverged(String),
    #[error("expression: {0}")]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Symm(#[from] SymmError),
}

/// Structural constants supplied with a problem.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StructuralFlags {
    /// Claimed `phi_u <= c_phi < 0`.
    pub c_phi: Option<f64>,
    /// Claimed `f_u / f >= c_f > 0`.
    pub c_f: Option<f64>,
    /// Claimed `sigma_k(D^2 u0)/sigma_l(D^2 u0) >= f(x, u0)`.
    pub initial_subsolution: bool,
}

/// A problem instance: operator indices, domain and data expressions.
///
/// `eps` and `s` replace `f` by `f e^{s + eps u}`, which is how the
/// regularized elliptic family is posed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub q: QuotientIndices,
    pub domain: Domain,
    pub f: Expr,
    pub phi: Expr,
    pub u0: Expr,
    pub flags: StructuralFlags,
    pub eps: f64,
    pub s: f64,
}

pub const PARTIAL_U_STEP: f64 = 1e-6;

impl ProblemSpec {
    pub fn new(
        k: usize,
        l: usize,
        domain: Domain,
        f: &str,
        phi: &str,
        u0: &str,
    ) -> Result<Self, FlowError> {
        let q = QuotientIndices::new(k, l, 2)
            .map_err(|e| FlowError::Invalid(format!("problem.k/problem.l: {e}")))?;
        let parse = |src: &str, slot: Slot, name: &str| {
            parse_for(src, slot).map_err(|e| FlowError::Invalid(format!("problem.{name}: {e}")))
        };
        Ok(Self {
            q,
            domain,
            f: parse(f, Slot::F, "f")?,
            phi: parse(phi, Slot::Phi, "phi")?,
            u0: parse(u0, Slot::U0, "u0")?,
            flags: StructuralFlags::default(),
            eps: 0.0,
            s: 0.0,
        })
    }

    pub fn with_flags(mut self, flags: StructuralFlags) -> Self {
        self.flags = flags;
        self
    }

    /// The family member `f e^{s + eps u}`.
    pub fn regularized(&self, eps: f64, s: f64) -> Self {
        let mut out = self.clone();
        out.eps = eps;
        out.s = s;
        out
    }

    pub fn phi_depends_on_u(&self) -> bool {
        self.phi.uses(Var::U)
    }

    pub fn f_depends_on_u(&self) -> bool {
        self.f.uses(Var::U)
    }

    /// Effective `c_f`, including the regularization.
    pub fn c_f(&self) -> Option<f64> {
        match (self.flags.c_f, self.eps > 0.0) {
            (Some(c), _) => Some(c + self.eps),
            (None, true) => Some(self.eps),
            (None, false) => None,
        }
    }

    /// `log f_eff(x, u)`.
    pub fn log_f(&self, x: Point, u: f64) -> Result<f64, FlowError> {
        let f = self.f.eval(&Env::at(x).with_u(u))?;
        if !(f > 0.0) {
            return Err(FlowError::Invalid(format!(
                "f > 0 violated at ({:.6}, {:.6}), u = {u}: f = {f}",
                x[0], x[1]
            )));
        }
        Ok(f.ln() + self.s + self.eps * u)
    }

    /// `d log f_eff / du`.
    pub fn dlog_f(&self, x: Point, u: f64) -> Result<f64, FlowError> {
        if !self.f_depends_on_u() {
            return Ok(self.eps);
        }
        let env = Env::at(x).with_u(u);
        let f = self.f.eval(&env)?;
        Ok(self.f.partial_u(&env, PARTIAL_U_STEP)? / f + self.eps)
    }

    /// `(phi, phi_u)` at a boundary point.
    pub fn phi_at(&self, x: Point, u: f64) -> Result<(f64, f64), FlowError> {
        let env = Env::at(x).with_u(u);
        let p = self.phi.eval(&env)?;
        let pu = if self.phi_depends_on_u() {
            self.phi.partial_u(&env, PARTIAL_U_STEP)?
        } else {
            0.0
        };
        Ok((p, pu))
    }

    pub(crate) fn phi_fn(&self) -> impl Fn(Point, f64) -> Result<(f64, f64), DiscError> + '_ {
        move |x, u| self.phi_at(x, u).map_err(|e| DiscError::Phi(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Explicit,
    LinearlyImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// `max |u_t| < tol_steady`.
    Steady,
    /// `osc(u_t) < tol_trans` and the mean of `u_t` moved less than
    /// `tol_trans` over the last `window` records.
    Translating,
    /// Run to `t_max`.
    Horizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSettings {
    pub scheme: Scheme,
    pub cfl: f64,
    /// Step of the linearly implicit scheme.
    pub dt: f64,
    /// First implicit step; later steps double until they reach `dt`.
    pub dt_start: Option<f64>,
    pub tol_steady: f64,
    pub tol_trans: f64,
    pub window: usize,
    pub checkpoint_every: usize,
    pub record_every: usize,
    pub t_max: f64,
    pub max_steps: usize,
    pub max_halvings: usize,
    /// Relative cone slack: `sigma_i > cone_slack (1 + |lambda|_1)`.
    pub cone_slack: f64,
    pub exec: Exec,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            scheme: Scheme::LinearlyImplicit,
            cfl: 0.4,
            dt: 0.05,
            dt_start: None,
            tol_steady: 1e-8,
            tol_trans: 1e-8,
            window: 50,
            checkpoint_every: 100,
            record_every: 1,
            t_max: 100.0,
            max_steps: 1_000_000,
            max_halvings: 20,
            cone_slack: 1e-12,
            exec: Exec::default(),
        }
    }
}

/// Everything the steppers and monitors need at one interior node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEval {
    pub ut: f64,
    pub quotient: f64,
    /// `(F^11, F^12, F^22)`.
    pub fij: [f64; 3],
    /// Largest eigenvalue of `F`.
    pub g_max: f64,
    pub dlog_f: f64,
    /// Spectral norm of the discrete Hessian.
    pub hess_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub u: GridFn,
    pub dt: f64,
    pub step_count: usize,
    pub diverged: bool,
    /// Constant removed from `u` to keep stored values small; the solution
    /// is `u + offset`. Only nonzero for translation-invariant problems.
    pub offset: f64,
}

impl FlowState {
    /// The solution field `u + offset`.
    pub fn field(&self) -> GridFn {
        if self.offset == 0.0 {
            return self.u.clone();
        }
        let mut out = GridFn::new(
            self.u.grid().clone(),
            self.u.values().iter().map(|v| v + self.offset).collect(),
        )
        .expect("same grid");
        if self.u.is_closed() {
            out.mark_closed();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordStatus {
    Ok,
    Steady,
    Translating,
    Horizon,
    Diverged,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Steady => "steady",
            RecordStatus::Translating => "translating",
            RecordStatus::Horizon => "t_max",
            RecordStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub t: f64,
    pub max_ut: f64,
    pub min_ut: f64,
    pub mean_ut: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub sup_grad: f64,
    pub sup_hess: f64,
    pub min_quotient: f64,
    /// Oscillation of the difference between the two latest checkpoints.
    pub osc: Option<f64>,
    pub m0_bound: Option<f64>,
    pub c2_bound: Option<f64>,
    pub status: RecordStatus,
}

pub const MONITOR_HEADER: &str = "t,max_ut,min_ut,min_u,max_u,sup_grad,sup_hess,min_quotient,osc,status";

impl MonitorRecord {
    pub fn csv_row(&self) -> String {
        let osc = self.osc.map(|v| format!("{v:.16e}")).unwrap_or_default();
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.t,
            self.max_ut,
            self.min_ut,
            self.min_u,
            self.max_u,
            self.sup_grad,
            self.sup_hess,
            self.min_quotient,
            osc,
            self.status.as_str()
        )
    }
}

/// Quantities fixed at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub max_ut: f64,
    pub min_ut: f64,
    pub max_abs_u0: f64,
    /// Boundary residual of the unprojected `u0` (first compatibility order).
    pub compat_residual: f64,
    pub m0: Option<f64>,
    pub c2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Steady,
    Translating,
    Horizon,
    Diverged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Steady => "steady",
            StopReason::Translating => "translating",
            StopReason::Horizon => "t_max",
            StopReason::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub osc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub state: FlowState,
    pub records: Vec<MonitorRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub stop: StopReason,
    pub initial: InitialData,
    pub rejected_steps: usize,
    pub message: Option<String>,
}

impl RunOutcome {
    pub fn last(&self) -> &MonitorRecord {
        self.records.last().expect("runs record t = 0")
    }

    /// Final `u_t` level (the speed of a translating run).
    pub fn speed(&self) -> f64 {
        self.last().mean_ut
    }
}

/// Interior rows of the linearized operator, in grid order of interior
/// nodes: merged column lists and where each second-derivative weight lands.
#[derive(Debug, Clone)]
struct RowPattern {
    cols: Vec<usize>,
    slots: [Vec<usize>; 3],
    diag: usize,
}

/// Flow engine bound to one problem and one grid.
#[derive(Debug, Clone)]
pub struct Flow {
    spec: ProblemSpec,
    grid: Arc<Grid>,
    stencils: Stencils,
    closure: BoundaryClosure,
    settings: FlowSettings,
    rows: Vec<RowPattern>,
    system: Option<SparseSystem>,
}

impl Flow {
    pub fn new(spec: ProblemSpec, grid: Arc<Grid>, settings: FlowSettings) -> Result<Self, FlowError> {
        if grid.domain() != spec.domain {
            return Err(FlowError::Invalid("grid does not cover the problem domain".into()));
        }
        let stencils = Stencils::new(&grid);
        let closure = BoundaryClosure::new(&grid);
        let rows = grid
            .interior()
            .iter()
            .map(|&p| {
                let st = stencils.node(p);
                let mut cols: Vec<usize> = st
                    .d11
                    .iter()
                    .chain(&st.d12)
                    .chain(&st.d22)
                    .map(|e| e.0)
                    .chain(std::iter::once(p))
                    .collect();
                cols.sort_unstable();
                cols.dedup();
                let find = |j: usize| cols.binary_search(&j).expect("column in row");
                let slots = [
                    st.d11.iter().map(|e| find(e.0)).collect(),
                    st.d12.iter().map(|e| find(e.0)).collect(),
                    st.d22.iter().map(|e| find(e.0)).collect(),
                ];
                let diag = find(p);
                RowPattern { cols, slots, diag }
            })
            .collect();
        let mut flow = Self {
            spec,
            grid,
            stencils,
            closure,
            settings,
            rows,
            system: None,
        };
        if flow.settings.scheme == Scheme::LinearlyImplicit {
            flow.system = Some(SparseSystem::new(flow.grid.len(), &flow.pattern())?);
        }
        Ok(flow)
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn stencils(&self) -> &Stencils {
        &self.stencils
    }

    pub fn closure(&self) -> &BoundaryClosure {
        &self.closure
    }

    pub fn settings(&self) -> &FlowSettings {
        &self.settings
    }

    /// `f` and `phi` ignore `u`, so adding a constant to a solution gives a
    /// solution.
    pub fn translation_invariant(&self) -> bool {
        !self.spec.f_depends_on_u() && !self.spec.phi_depends_on_u() && self.spec.eps == 0.0
    }

    /// `(row, col)` positions of the step matrix: interior rows first in
    /// interior order, then boundary rows, each in column order.
    pub(crate) fn pattern(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, &p) in self.rows.iter().zip(self.grid.interior()) {
            out.extend(r.cols.iter().map(|&c| (p, c)));
        }
        for row in self.closure.rows() {
            let mut cols: Vec<usize> = row.off.iter().map(|e| e.0).collect();
            cols.push(row.node);
            cols.sort_unstable();
            out.extend(cols.into_iter().map(|c| (row.node, c)));
        }
        out
    }

    /// Values matching [`Flow::pattern`] for `shift I - J`, where the
    /// interior diagonal gets `shift + dlog_f` and boundary rows carry the
    /// linearized closure `N - phi_u`.
    pub(crate) fn matrix_values(
        &self,
        values: &[f64],
        evals: &[NodeEval],
        shift: f64,
    ) -> Result<Vec<f64>, FlowError> {
        let mut out = Vec::new();
        for ((r, &p), e) in self.rows.iter().zip(self.grid.interior()).zip(evals) {
            let st = self.stencils.node(p);
            let mut row = vec![0.0; r.cols.len()];
            let coef = [e.fij[0], 2.0 * e.fij[1], e.fij[2]];
            for (d, w) in [&st.d11, &st.d12, &st.d22].into_iter().enumerate() {
                for (&(_, c), &slot) in w.iter().zip(&r.slots[d]) {
                    row[slot] -= coef[d] * c;
                }
            }
            row[r.diag] += shift + e.dlog_f;
            out.extend(row);
        }
        for (row, &p) in self.closure.rows().iter().zip(self.grid.boundary()) {
            let (_, pu) = self.spec.phi_at(self.grid.point(p), values[p])?;
            let mut entries: Vec<(usize, f64)> = row.off.clone();
            entries.push((row.node, row.diag - pu));
            entries.sort_by_key(|e| e.0);
            out.extend(entries.into_iter().map(|e| e.1));
        }
        Ok(out)
    }

    /// Projects `u0` onto the boundary relation.
    pub fn initial_field(&self) -> Result<(GridFn, f64), FlowError> {
        let mut raw = Vec::with_capacity(self.grid.len());
        for &p in self.grid.points() {
            raw.push(self.spec.u0.eval(&Env::at(p))?);
        }
        let raw = GridFn::new(self.grid.clone(), raw)?;
        let compat = self
            .closure
            .residuals(raw.values(), self.spec.phi_fn())?
            .iter()
            .fold(0.0f64, |m, r| m.max(r.abs()));
        let u = self.closure.apply_neumann(&raw, self.spec.phi_fn())?;
        Ok((u, compat))
    }

    pub fn initial_state(&self) -> Result<FlowState, FlowError> {
        let (u, _) = self.initial_field()?;
        Ok(self.state_from(u))
    }

    /// Starts from a given field; it is closed first.
    pub fn state_from(&self, u: GridFn) -> FlowState {
        FlowState {
            t: 0.0,
            u,
            dt: self.settings.dt_start.unwrap_or(self.settings.dt).min(self.settings.dt),
            step_count: 0,
            diverged: false,
            offset: 0.0,
        }
    }

    fn cone_error(&self, p: usize, failing: usize, value: f64) -> FlowError {
        let x = self.grid.point(p);
        FlowError::Inadmissible {
            node: p,
            x: x[0],
            y: x[1],
            failing,
            value,
        }
    }

    /// Evaluates one interior node of `values`.
    pub fn eval_node(&self, values: &[f64], p: usize) -> Result<NodeEval, FlowError> {
        let [h11, h12, h22] = self.stencils.node(p).hessian(values);
        let h = SymMatrix::sym2(h11, h12, h22);
        if !h.is_finite() {
            return Err(FlowError::Diverged(format!("non-finite Hessian at node {p}")));
        }
        let eig = eigen_sym(&h)?;
        let lam = eig.values.values();
        let k = self.spec.q.k();
        let scale = 1.0 + lam.iter().map(|v| v.abs()).sum::<f64>();
        if let Some((i, v)) = first_cone_failure(lam, k, self.settings.cone_slack * scale) {
            return Err(self.cone_error(p, i, v));
        }
        let s = sigmas(lam, k);
        let quotient = s[k] / s[self.spec.q.l()];
        let grad = d_quotient(lam, self.spec.q)?;
        let g = [grad[0] / quotient, grad[1] / quotient];
        let f = eig.vectors.conjugate_diag(&g);
        let x = self.grid.point(p);
        let u = values[p];
        Ok(NodeEval {
            ut: quotient.ln() - self.spec.log_f(x, u)?,
            quotient,
            fij: [f.get(0, 0), f.get(0, 1), f.get(1, 1)],
            g_max: g[0].max(g[1]),
            dlog_f: self.spec.dlog_f(x, u)?,
            hess_norm: lam[0].abs().max(lam[1].abs()),
        })
    }

    /// Node evaluations over the interior, in interior order.
    pub fn eval_all(&self, values: &[f64]) -> Result<Vec<NodeEval>, FlowError> {
        let interior = self.grid.interior();
        self.settings
            .exec
            .try_map(interior.len(), |i| self.eval_node(values, interior[i]))
    }

    /// `u_t` at the interior nodes (interior order).
    pub fn rhs(&self, u: &GridFn) -> Result<Vec<f64>, FlowError> {
        if !u.is_closed() {
            return Err(DiscError::Unclosed.into());
        }
        Ok(self.eval_all(u.values())?.iter().map(|e| e.ut).collect())
    }

    /// Explicit step size `cfl h_min^2 / (2 n g_max)`.
    pub fn select_dt(&self, evals: &[NodeEval]) -> Result<f64, FlowError> {
        let g_max = evals.iter().fold(0.0f64, |m, e| m.max(e.g_max));
        if !g_max.is_finite() || g_max <= 0.0 {
            return Err(FlowError::Diverged(format!("ellipticity bound {g_max}")));
        }
        let h = self.grid.h_min();
        Ok(self.settings.cfl * h * h / (2.0 * self.spec.q.n() as f64 * g_max))
    }

    /// Proposes `u + du` for step `dt` without the cone check.
    fn trial(&self, state: &FlowState, evals: &[NodeEval], dt: f64) -> Result<Vec<f64>, FlowError> {
        let v = state.u.values();
        let mut next = v.to_vec();
        match self.settings.scheme {
            Scheme::Explicit => {
                for (&p, e) in self.grid.interior().iter().zip(evals) {
                    next[p] += dt * e.ut;
                }
            }
            Scheme::LinearlyImplicit => {
                let sys = self.system.as_ref().expect("implicit scheme has a system");
                let vals = self.matrix_values(v, evals, 1.0 / dt)?;
                let mut rhs = vec![0.0; v.len()];
                for (&p, e) in self.grid.interior().iter().zip(evals) {
                    rhs[p] = e.ut;
                }
                let res = self.closure.residuals(v, self.spec.phi_fn())?;
                for (row, r) in self.closure.rows().iter().zip(res) {
                    rhs[row.node] = -r;
                }
                let du = sys.solve(&vals, &rhs)?;
                for (n, d) in next.iter_mut().zip(du) {
                    *n += d;
                }
            }
        }
        self.closure.close_in_place(&mut next, self.spec.phi_fn())?;
        Ok(next)
    }

    /// One step with cone guarding. Returns the new state and its node
    /// evaluations; a state that exhausted its halvings is flagged diverged.
    pub fn advance(
        &self,
        state: &FlowState,
        evals: &[NodeEval],
    ) -> Result<(FlowState, Option<Vec<NodeEval>>, usize), FlowError> {
        let mut dt = match self.settings.scheme {
            Scheme::Explicit => self.select_dt(evals)?,
            Scheme::LinearlyImplicit => state.dt,
        };
        let mut rejected = 0;
        for _ in 0..=self.settings.max_halvings {
            let attempt = self
                .trial(state, evals, dt)
                .and_then(|next| Ok((self.eval_all(&next)?, next)));
            match attempt {
                Ok((new_evals, mut next)) if next.iter().all(|v| v.is_finite()) => {
                    let mut offset = state.offset;
                    if self.translation_invariant() {
                        // growth of u only adds round-off through the large
                        // pole weights; move it into the offset
                        let mean = next.iter().sum::<f64>() / next.len() as f64;
                        if mean.abs() > 1.0 {
                            next.iter_mut().for_each(|v| *v -= mean);
                            offset += mean;
                        }
                    }
                    let mut u = GridFn::new(self.grid.clone(), next)?;
                    u.mark_closed();
                    let next_dt = match self.settings.scheme {
                        Scheme::Explicit => dt,
                        Scheme::LinearlyImplicit => (2.0 * dt).min(self.settings.dt),
                    };
                    let new = FlowState {
                        t: state.t + dt,
                        u,
                        dt: next_dt,
                        step_count: state.step_count + 1,
                        diverged: false,
                        offset,
                    };
                    return Ok((new, Some(new_evals), rejected));
                }
                Ok(_)
                | Err(FlowError::Inadmissible { .. })
                | Err(FlowError::Solve(_))
                | Err(FlowError::Diverged(_))
                | Err(FlowError::Disc(DiscError::NoConvergence { .. })) => {
                    rejected += 1;
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        let mut out = state.clone();
        out.diverged = true;
        out.dt = dt;
        Ok((out, None, rejected))
    }

    /// Single step from a state (evaluates the state first).
    pub fn step(&self, state: &FlowState) -> Result<FlowState, FlowError> {
        let evals = self.eval_all(state.u.values())?;
        Ok(self.advance(state, &evals)?.0)
    }

    /// Monitor record of a state with its node evaluations.
    pub fn monitors(&self, state: &FlowState, evals: &[NodeEval], init: Option<&InitialData>) -> MonitorRecord {
        let v = state.u.values();
        let (mut max_ut, mut min_ut, mut sum_ut) = (f64::NEG_INFINITY, f64::INFINITY, 0.0);
        let (mut sup_hess, mut min_q) = (0.0f64, f64::INFINITY);
        for e in evals {
            max_ut = max_ut.max(e.ut);
            min_ut = min_ut.min(e.ut);
            sum_ut += e.ut;
            sup_hess = sup_hess.max(e.hess_norm);
            min_q = min_q.min(e.quotient);
        }
        let sup_grad = (0..self.grid.len())
            .map(|p| {
                let g = self.stencils.node(p).gradient(v);
                g[0].hypot(g[1])
            })
            .fold(0.0f64, f64::max);
        MonitorRecord {
            t: state.t,
            max_ut,
            min_ut,
            mean_ut: sum_ut / evals.len().max(1) as f64,
            min_u: state.u.min() + state.offset,
            max_u: state.u.max() + state.offset,
            sup_grad,
            sup_hess,
            min_quotient: min_q,
            osc: None,
            m0_bound: init.and_then(|i| i.m0),
            c2_bound: init.and_then(|i| i.c2),
            status: RecordStatus::Ok,
        }
    }

    /// Sampled `max phi_u` over the boundary at the given values.
    fn sampled_c_phi(&self, values: &[f64]) -> Result<f64, FlowError> {
        let mut worst = f64::NEG_INFINITY;
        for &p in self.grid.boundary() {
            worst = worst.max(self.spec.phi_at(self.grid.point(p), values[p])?.1);
        }
        Ok(worst)
    }

    /// Bounds fixed at `t = 0`: `M0 = max(max phi(x,0), 0)/|c_phi| +
    /// max|u0| + 2 max|u_t(x,0)|/c_f` and `c2 = min f(x, -M0) e^{-max|u_t(x,0)|}`.
    pub fn initial_data(&self, u: &GridFn, evals: &[NodeEval], compat: f64) -> Result<InitialData, FlowError> {
        let max_ut = evals.iter().fold(f64::NEG_INFINITY, |m, e| m.max(e.ut));
        let min_ut = evals.iter().fold(f64::INFINITY, |m, e| m.min(e.ut));
        let abs_ut = max_ut.abs().max(min_ut.abs());
        let max_abs_u0 = u.max_abs();
        let c_phi = match self.spec.flags.c_phi {
            Some(c) => Some(c),
            None if self.spec.phi_depends_on_u() => Some(self.sampled_c_phi(u.values())?),
            None => None,
        };
        let m0 = match (c_phi, self.spec.c_f()) {
            (Some(cp), Some(cf)) if cp < 0.0 && cf > 0.0 => {
                let mut phi0 = f64::NEG_INFINITY;
                for &p in self.grid.boundary() {
                    phi0 = phi0.max(self.spec.phi_at(self.grid.point(p), 0.0)?.0);
                }
                Some(phi0.max(0.0) / cp.abs() + max_abs_u0 + 2.0 * abs_ut / cf)
            }
            _ => None,
        };
        let floor_u = if self.spec.f_depends_on_u() || self.spec.eps != 0.0 {
            m0.map(|m| -m)
        } else {
            Some(0.0)
        };
        let c2 = match floor_u {
            Some(uu) => {
                let mut fmin = f64::INFINITY;
                for &p in self.grid.points() {
                    fmin = fmin.min(self.spec.log_f(p, uu)?.exp());
                }
                Some(fmin * (-abs_ut).exp())
            }
            None => None,
        };
        Ok(InitialData {
            max_ut,
            min_ut,
            max_abs_u0,
            compat_residual: compat,
            m0,
            c2,
        })
    }

    /// Checks the structural conditions on the grid samples and the
    /// admissibility of the projected initial field.
    pub fn validate(&self) -> Result<Vec<String>, FlowError> {
        let mut warnings = Vec::new();
        let (u, _) = self.initial_field()?;
        let v = u.values();
        let spec = &self.spec;
        for (p, &x) in self.grid.points().iter().enumerate() {
            let env = Env::at(x).with_u(v[p]);
            let f = spec.f.eval(&env)?;
            if !(f > 0.0) {
                return Err(FlowError::Invalid(format!(
                    "f > 0 violated at ({:.6}, {:.6}): f = {f}",
                    x[0], x[1]
                )));
            }
            if spec.f_depends_on_u() {
                let fu = spec.f.partial_u(&env, PARTIAL_U_STEP)?;
                if fu < -1e-8 {
                    return Err(FlowError::Invalid(format!(
                        "f_u >= 0 violated at ({:.6}, {:.6}): f_u = {fu:e}",
                        x[0], x[1]
                    )));
                }
                if let Some(cf) = spec.flags.c_f {
                    if cf <= 0.0 || fu / f < cf - 1e-8 {
                        return Err(FlowError::Invalid(format!(
                            "f_u/f >= c_f > 0 violated at ({:.6}, {:.6}): f_u/f = {:e}, c_f = {cf}",
                            x[0],
                            x[1],
                            fu / f
                        )));
                    }
                }
            } else if let Some(cf) = spec.flags.c_f {
                return Err(FlowError::Invalid(format!(
                    "f_u/f >= c_f > 0 cannot hold with c_f = {cf}: f does not depend on u"
                )));
            }
        }
        if spec.phi_depends_on_u() {
            let worst = self.sampled_c_phi(v)?;
            let bound = spec.flags.c_phi.unwrap_or(0.0);
            if spec.flags.c_phi.is_some_and(|c| c >= 0.0) {
                return Err(FlowError::Invalid(format!(
                    "phi_u <= c_phi < 0 needs a negative c_phi, got {bound}"
                )));
            }
            if !(worst < 0.0) || worst > bound + 1e-8 {
                return Err(FlowError::Invalid(format!(
                    "phi_u <= c_phi < 0 violated: sampled max phi_u = {worst:e}"
                )));
            }
            if spec.flags.c_f.is_none() && !spec.flags.initial_subsolution && spec.eps == 0.0 {
                warnings.push(
                    "neither f_u/f >= c_f nor the initial subsolution condition was declared; \
                     convergence is outside the theory"
                        .to_string(),
                );
            }
        } else if spec.flags.c_phi.is_some() {
            warnings.push("c_phi given but phi does not depend on u".to_string());
        }
        let evals = self.eval_all(v).map_err(|e| match e {
            FlowError::Inadmissible {
                node,
                x,
                y,
                failing,
                value,
            } => FlowError::Invalid(format!(
                "u0 is not {}-admissible: sigma_{failing} = {value:e} at node {node} ({x:.6}, {y:.6})",
                spec.q.k()
            )),
            other => other,
        })?;
        if spec.flags.initial_subsolution {
            for (e, &p) in evals.iter().zip(self.grid.interior()) {
                let x = self.grid.point(p);
                let f = spec.log_f(x, v[p])?.exp();
                if e.quotient < f - 1e-8 {
                    return Err(FlowError::Invalid(format!(
                        "sigma_k(D2 u0)/sigma_l(D2 u0) >= f(x, u0) violated at ({:.6}, {:.6}): {} < {}",
                        x[0], x[1], e.quotient, f
                    )));
                }
            }
        }
        if self.grid.domain().nonsmooth() {
            warnings.push("square domain: outside the smooth strictly convex theory".to_string());
        }
        Ok(warnings)
    }

    /// Runs from the projected initial field.
    pub fn run(&self, rule: StopRule) -> Result<RunOutcome, FlowError> {
        let (u, compat) = self.initial_field()?;
        self.run_from(self.state_from(u), compat, rule)
    }

    pub fn run_from(&self, state: FlowState, compat: f64, rule: StopRule) -> Result<RunOutcome, FlowError> {
        let s = &self.settings;
        let mut evals = self.eval_all(state.u.values())?;
        let initial = self.initial_data(&state.field(), &evals, compat)?;
        let mut state = state;
        let mut records = vec![self.monitors(&state, &evals, Some(&initial))];
        let mut checkpoints = Vec::new();
        let mut last_checkpoint = state.u.clone();
        let mut latest_osc = None;
        let mut rejected = 0;
        let stop;
        let mut message = None;
        loop {
            let rec = records.last().unwrap();
            let hit = match rule {
                StopRule::Steady => rec.max_ut.abs().max(rec.min_ut.abs()) < s.tol_steady,
                StopRule::Translating => {
                    rec.max_ut - rec.min_ut < s.tol_trans
                        && records.len() > s.window
                        && (rec.mean_ut - records[records.len() - 1 - s.window].mean_ut).abs()
                            < s.tol_trans
                }
                StopRule::Horizon => false,
            };
            if hit {
                stop = match rule {
                    StopRule::Steady => StopReason::Steady,
                    _ => StopReason::Translating,
                };
                break;
            }
            if state.t >= s.t_max - 1e-12 * s.t_max.max(1.0) || state.step_count >= s.max_steps {
                stop = StopReason::Horizon;
                break;
            }
            let (next, next_evals, rej) = self.advance(&state, &evals)?;
            rejected += rej;
            let Some(next_evals) = next_evals else {
                stop = StopReason::Diverged;
                message = Some(format!(
                    "step size fell below {:e} after {} halvings at t = {}",
                    next.dt, s.max_halvings, state.t
                ));
                state = next;
                break;
            };
            state = next;
            evals = next_evals;
            if s.checkpoint_every > 0 && state.step_count.is_multiple_of(s.checkpoint_every) {
                let osc = crate::geometry::osc_difference(&state.u, &last_checkpoint);
                checkpoints.push(Checkpoint { t: state.t, osc });
                latest_osc = Some(osc);
                last_checkpoint = state.u.clone();
            }
            if state.step_count.is_multiple_of(s.record_every.max(1)) {
                let mut rec = self.monitors(&state, &evals, Some(&initial));
                rec.osc = latest_osc;
                records.push(rec);
            }
        }
        if records.last().unwrap().t != state.t && !state.diverged {
            let mut rec = self.monitors(&state, &evals, Some(&initial));
            rec.osc = latest_osc;
            records.push(rec);
        }
        let last = records.last_mut().unwrap();
        last.status = match stop {
            StopReason::Steady => RecordStatus::Steady,
            StopReason::Translating => RecordStatus::Translating,
            StopReason::Horizon => RecordStatus::Horizon,
            StopReason::Diverged => RecordStatus::Diverged,
        };
        Ok(RunOutcome {
            state,
            records,
            checkpoints,
            stop,
            initial,
            rejected_steps: rejected,
            message,
        })
    }
}

/// Log-linear least-squares decay rate of `max |u_t|` over the tail half of
/// the records; values at round-off level are ignored.
pub fn fit_decay_rate(records: &[MonitorRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records[records.len() / 2..]
        .iter()
        .map(|r| (r.t, r.max_ut.abs().max(r.min_ut.abs())))
        .filter(|&(_, a)| a > 1e-13)
        .map(|(t, a)| (t, a.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Result of one monitor check: worst margin (negative = violated).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Check {
    pub name: &'static str,
    pub applicable: bool,
    pub worst_margin: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &'static str, margin: Option<f64>) -> Self {
        match margin {
            Some(m) => Self {
                name,
                applicable: true,
                worst_margin: m,
                pass: m >= 0.0,
            },
            None => Self {
                name,
                applicable: false,
                worst_margin: 0.0,
                pass: true,
            },
        }
    }
}

/// Engineering tolerance of the discrete maximum-principle checks.
pub fn tol_mp(initial: &InitialData) -> f64 {
    1e-6 * (1.0 + initial.max_ut.abs().max(initial.min_ut.abs()))
}

/// The run-level monitor checks.
pub fn check_run(outcome: &RunOutcome, c_f: Option<f64>) -> Vec<Check> {
    let init = &outcome.initial;
    let tol = tol_mp(init);
    let recs = &outcome.records;
    let upper = init.max_ut.max(0.0);
    let lower = init.min_ut.min(0.0);
    let mp = recs
        .iter()
        .map(|r| (upper + tol - r.max_ut).min(r.min_ut - (lower - tol)))
        .fold(f64::INFINITY, f64::min);
    let abs0 = init.max_ut.abs().max(init.min_ut.abs());
    let decay = c_f.map(|cf| {
        recs.iter()
            .map(|r| abs0 + tol - r.max_ut.abs().max(r.min_ut.abs()) * (0.8 * cf * r.t).exp())
            .fold(f64::INFINITY, f64::min)
    });
    let c0 = init.m0.map(|m0| {
        recs.iter()
            .map(|r| m0 + tol - r.max_u.abs().max(r.min_u.abs()))
            .fold(f64::INFINITY, f64::min)
    });
    let floor = init.c2.map(|c2| {
        recs.iter()
            .map(|r| r.min_quotient - (c2 - tol))
            .fold(f64::INFINITY, f64::min)
    });
    let early = ((recs.len() as f64 * 0.1).ceil() as usize).max(1);
    let growth = {
        let g0 = recs[..early].iter().map(|r| r.sup_grad).fold(0.0, f64::max);
        let h0 = recs[..early].iter().map(|r| r.sup_hess).fold(0.0, f64::max);
        let last = outcome.last();
        (10.0 * g0 - last.sup_grad).min(10.0 * h0 - last.sup_hess)
    };
    let osc = if outcome.checkpoints.len() >= 2 {
        Some(
            outcome
                .checkpoints
                .windows(2)
                .map(|w| w[0].osc + tol - w[1].osc)
                .fold(f64::INFINITY, f64::min),
        )
    } else {
        None
    };
    vec![
        Check::new("u_t maximum principle", Some(mp)),
        Check::new("u_t exponential decay", decay),
        Check::new("C0 bound", c0),
        Check::new("quotient floor", floor),
        Check::new("no gradient/Hessian blow-up", Some(growth)),
        Check::new("checkpoint oscillation nonincreasing", osc),
    ]
}

/// Largest oscillation increase between consecutive checkpoints.
pub fn worst_osc_increase(checkpoints: &[Checkpoint]) -> f64 {
    checkpoints
        .windows(2)
        .map(|w| w[1].osc - w[0].osc)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmfunc::log_quotient_matrix;
    use std::f64::consts::LN_2;

    fn disk_grid(nr: usize, nt: usize) -> Arc<Grid> {
        Arc::new(Grid::polar(Domain::disk(1.0).unwrap(), nr, nt).unwrap())
    }

    fn laplace_spec() -> ProblemSpec {
        ProblemSpec::new(1, 0, Domain::disk(1.0).unwrap(), "1", "1", "0.5*(x1^2+x2^2)").unwrap()
    }

    #[test]
    fn rhs_of_paraboloid_is_log_two() {
        let flow = Flow::new(laplace_spec(), disk_grid(12, 24), FlowSettings::default()).unwrap();
        let (u, compat) = flow.initial_field().unwrap();
        assert!(compat < 1e-12);
        for ut in flow.rhs(&u).unwrap() {
            assert!((ut - LN_2).abs() < 1e-10, "{ut}");
        }
    }

    #[test]
    fn rhs_matches_direct_recomputation() {
        let spec = ProblemSpec::new(
            2,
            1,
            Domain::ellipse(1.2, 1.0).unwrap(),
            "exp(0.2*x1)",
            "0.3",
            "0.5*(x1^2+x2^2) + 0.1*x1^3 + 0.05*x1*x2",
        )
        .unwrap();
        let grid = Arc::new(Grid::polar(spec.domain, 10, 20).unwrap());
        let flow = Flow::new(spec.clone(), grid.clone(), FlowSettings::default()).unwrap();
        let mut u = GridFn::from_fn(grid.clone(), |x| spec.u0.eval(&Env::at(x)).unwrap());
        u.mark_closed();
        let hs = flow.stencils().hessian(&u).unwrap();
        let rates = flow.rhs(&u).unwrap();
        for ((h, &p), ut) in hs.iter().zip(grid.interior()).zip(rates) {
            let (value, _) = log_quotient_matrix(h, spec.q).unwrap();
            let x = grid.point(p);
            let expect = value - 0.2 * x[0];
            assert!((ut - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn explicit_dt_closed_form() {
        let settings = FlowSettings {
            scheme: Scheme::Explicit,
            ..Default::default()
        };
        let g1 = Arc::new(Grid::cartesian(Domain::square(1.0).unwrap(), 11).unwrap());
        let g2 = Arc::new(Grid::cartesian(Domain::square(1.0).unwrap(), 21).unwrap());
        let spec = ProblemSpec::new(1, 0, Domain::square(1.0).unwrap(), "1", "1", "0.5*(x1^2+x2^2)").unwrap();
        let mut dts = Vec::new();
        for g in [g1, g2] {
            let flow = Flow::new(spec.clone(), g.clone(), settings.clone()).unwrap();
            let (u, _) = flow.initial_field().unwrap();
            let evals = flow.eval_all(u.values()).unwrap();
            let dt = flow.select_dt(&evals).unwrap();
            let h = g.h_min();
            assert!((dt - 0.4 * h * h / 2.0).abs() < 1e-15);
            dts.push(dt);
        }
        assert!((dts[0] / dts[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn explicit_step_adds_dt_log_two() {
        let settings = FlowSettings {
            scheme: Scheme::Explicit,
            ..Default::default()
        };
        let flow = Flow::new(laplace_spec(), disk_grid(8, 16), settings).unwrap();
        let s0 = flow.initial_state().unwrap();
        let s1 = flow.step(&s0).unwrap();
        let dt = s1.t;
        for &p in flow.grid().interior() {
            let d = s1.u.values()[p] - s0.u.values()[p];
            assert!((d - dt * LN_2).abs() < 1e-14);
        }
    }

    #[test]
    fn implicit_translation_is_exact() {
        let flow = Flow::new(laplace_spec(), disk_grid(8, 16), FlowSettings::default()).unwrap();
        let s0 = flow.initial_state().unwrap();
        let s1 = flow.step(&s0).unwrap();
        for (a, b) in s1.u.values().iter().zip(s0.u.values()) {
            assert!((a - b - s1.t * LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_data() {
        let d = Domain::disk(1.0).unwrap();
        let grid = disk_grid(8, 16);
        let bad_phi = ProblemSpec::new(1, 0, d, "exp(u)", "u", "0.5*(x1^2+x2^2)").unwrap();
        let err = Flow::new(bad_phi, grid.clone(), FlowSettings::default())
            .unwrap()
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("phi_u <= c_phi < 0"), "{err}");
        let bad_u0 = ProblemSpec::new(1, 0, d, "1", "0", "-x1^2").unwrap();
        let err = Flow::new(bad_u0, grid.clone(), FlowSettings::default())
            .unwrap()
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("admissible"), "{err}");
        let bad_f = ProblemSpec::new(1, 0, d, "x1", "0", "x1^2+x2^2").unwrap();
        let err = Flow::new(bad_f, grid, FlowSettings::default())
            .unwrap()
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("f > 0"), "{err}");
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let recs: Vec<MonitorRecord> = (0..40)
            .map(|i| {
                let t = 0.1 * i as f64;
                MonitorRecord {
                    t,
                    max_ut: 0.3 * (-1.7 * t).exp(),
                    min_ut: 0.0,
                    mean_ut: 0.0,
                    min_u: 0.0,
                    max_u: 0.0,
                    sup_grad: 0.0,
                    sup_hess: 0.0,
                    min_quotient: 1.0,
                    osc: None,
                    m0_bound: None,
                    c2_bound: None,
                    status: RecordStatus::Ok,
                }
            })
            .collect();
        assert!((fit_decay_rate(&recs).unwrap() - 1.7).abs() < 1e-10);
    }

    #[test]
    fn monitor_csv_columns() {
        assert_eq!(MONITOR_HEADER.split(',').count(), 10);
        let flow = Flow::new(laplace_spec(), disk_grid(8, 16), FlowSettings::default()).unwrap();
        let s = flow.initial_state().unwrap();
        let ev = flow.eval_all(s.u.values()).unwrap();
        let row = flow.monitors(&s, &ev, None).csv_row();
        assert_eq!(row.split(',').count(), 10);
        assert!(row.ends_with(",,ok"));
    }
}
