//! Finite-difference operators on both grid backends and the nonlinear
//! Neumann closure `u_nu = phi(x, u)`.
//!
//! Every derivative is stored as a per-node linear stencil in Cartesian
//! components. On the polar backend the stencils already contain the chain
//! rule of the map `x = (a r cos(theta), b r sin(theta))`, so callers never
//! see computational coordinates.

use thiserror::Error;

use crate::geometry::{Backend, GeomError, Grid, GridFn, NodeKind, Point};
use crate::symmfunc::SymMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscError {
    #[error("boundary closure has not been applied to this field")]
    Unclosed,
    #[error(
        "boundary relation at node {node} ({x:.6}, {y:.6}) has no sign change; \
         phi must be nonincreasing in u"
    )]
    NoBracket { node: usize, x: f64, y: f64 },
    #[error("boundary solve at node {node} did not converge (residual {residual:e})")]
    NoConvergence { node: usize, residual: f64 },
    #[error("boundary data: {0}")]
    Phi(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// Sparse linear functional on nodal values, sorted by node index.
pub type Weights = Vec<(usize, f64)>;

/// Applies a stencil. Summation runs in index order.
#[inline]
pub fn apply(w: &[(usize, f64)], values: &[f64]) -> f64 {
    w.iter().map(|&(j, c)| c * values[j]).sum()
}

fn axpy(out: &mut Weights, c: f64, w: &[(usize, f64)]) {
    if c != 0.0 {
        out.extend(w.iter().map(|&(j, v)| (j, c * v)));
    }
}

fn finish(mut w: Weights) -> Weights {
    w.sort_by_key(|&(j, _)| j);
    let mut out: Weights = Vec::with_capacity(w.len());
    for (j, c) in w {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += c,
            _ => out.push((j, c)),
        }
    }
    out.retain(|&(_, c)| c != 0.0);
    out
}

/// Cartesian derivative stencils of one node. Second derivatives are empty
/// at boundary nodes; the flow never evaluates them there.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStencil {
    pub d1: Weights,
    pub d2: Weights,
    pub d11: Weights,
    pub d12: Weights,
    pub d22: Weights,
}

impl NodeStencil {
    /// `(u_11, u_12, u_22)`.
    #[inline]
    pub fn hessian(&self, values: &[f64]) -> [f64; 3] {
        [
            apply(&self.d11, values),
            apply(&self.d12, values),
            apply(&self.d22, values),
        ]
    }

    #[inline]
    pub fn gradient(&self, values: &[f64]) -> [f64; 2] {
        [apply(&self.d1, values), apply(&self.d2, values)]
    }
}

/// Derivative stencils for every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencils {
    nodes: Vec<NodeStencil>,
}

impl Stencils {
    pub fn new(grid: &Grid) -> Self {
        let nodes = match grid.backend() {
            Backend::Cartesian { n, h, .. } => cartesian_stencils(grid, n, h),
            Backend::Polar {
                nr,
                ntheta,
                dr,
                dtheta,
                a,
                b,
            } => polar_stencils(grid, nr, ntheta, dr, dtheta, a, b),
        };
        Self { nodes }
    }

    pub fn node(&self, i: usize) -> &NodeStencil {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hessians at the interior nodes, in `grid.interior()` order.
    pub fn hessian(&self, u: &GridFn) -> Result<Vec<SymMatrix>, DiscError> {
        if !u.is_closed() {
            return Err(DiscError::Unclosed);
        }
        let v = u.values();
        Ok(u
            .grid()
            .interior()
            .iter()
            .map(|&p| {
                let [h11, h12, h22] = self.nodes[p].hessian(v);
                SymMatrix::sym2(h11, h12, h22)
            })
            .collect())
    }

    /// Gradient at every node.
    pub fn gradient(&self, u: &GridFn) -> Result<Vec<[f64; 2]>, DiscError> {
        if !u.is_closed() {
            return Err(DiscError::Unclosed);
        }
        let v = u.values();
        Ok(self.nodes.iter().map(|s| s.gradient(v)).collect())
    }
}

fn cartesian_stencils(grid: &Grid, n: usize, h: f64) -> Vec<NodeStencil> {
    let idx = |i: usize, j: usize| j * n + i;
    // first derivative along one axis at position `k` of `0..n`
    let first = |k: usize, at: &dyn Fn(usize) -> usize| -> Weights {
        let c = 1.0 / (2.0 * h);
        if k == 0 {
            vec![(at(0), -3.0 * c), (at(1), 4.0 * c), (at(2), -c)]
        } else if k == n - 1 {
            vec![(at(n - 1), 3.0 * c), (at(n - 2), -4.0 * c), (at(n - 3), c)]
        } else {
            vec![(at(k - 1), -c), (at(k + 1), c)]
        }
    };
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let d1 = finish(first(i, &|ii| idx(ii, j)));
            let d2 = finish(first(j, &|jj| idx(i, jj)));
            let mut s = NodeStencil {
                d1,
                d2,
                ..Default::default()
            };
            if grid.kind(idx(i, j)) == NodeKind::Interior {
                let h2 = 1.0 / (h * h);
                let q = 1.0 / (4.0 * h * h);
                s.d11 = finish(vec![
                    (idx(i - 1, j), h2),
                    (idx(i, j), -2.0 * h2),
                    (idx(i + 1, j), h2),
                ]);
                s.d22 = finish(vec![
                    (idx(i, j - 1), h2),
                    (idx(i, j), -2.0 * h2),
                    (idx(i, j + 1), h2),
                ]);
                s.d12 = finish(vec![
                    (idx(i + 1, j + 1), q),
                    (idx(i - 1, j - 1), q),
                    (idx(i + 1, j - 1), -q),
                    (idx(i - 1, j + 1), -q),
                ]);
            }
            out.push(s);
        }
    }
    out
}

/// Inverse Jacobian `K = d(r, theta)/d(x, y)` of the polar map at `(r, theta)`.
fn inverse_jacobian(a: f64, b: f64, r: f64, th: f64) -> [[f64; 2]; 2] {
    let (s, c) = th.sin_cos();
    [[c / a, s / b], [-s / (a * r), c / (b * r)]]
}

fn polar_radius(j: usize, nr: usize, dr: f64) -> f64 {
    if j == nr - 1 {
        1.0
    } else {
        (j as f64 + 0.5) * dr
    }
}

#[allow(clippy::too_many_arguments)]
fn polar_stencils(
    grid: &Grid,
    nr: usize,
    nt: usize,
    dr: f64,
    dt: f64,
    a: f64,
    b: f64,
) -> Vec<NodeStencil> {
    let half = nt / 2;
    // angular weights exact on 1, cos(theta), sin(theta)
    let sd = dt.sin();
    let cd = 2.0 * (1.0 - dt.cos());
    // ring index may be -1 (phantom across the pole)
    let idx = |j: isize, m: isize| -> usize {
        let mm = m.rem_euclid(nt as isize) as usize;
        if j < 0 {
            ((mm + half) % nt) + ((-1 - j) as usize) * nt
        } else {
            j as usize * nt + mm
        }
    };
    let mut out = Vec::with_capacity(nr * nt);
    for j in 0..nr {
        let r = polar_radius(j, nr, dr);
        for m in 0..nt {
            let th = m as f64 * dt;
            let (s, c) = th.sin_cos();
            let k = inverse_jacobian(a, b, r, th);
            let (ji, mi) = (j as isize, m as isize);
            let u_t = vec![(idx(ji, mi + 1), 0.5 / sd), (idx(ji, mi - 1), -0.5 / sd)];
            let u_r = if j == nr - 1 {
                let q = 1.0 / (2.0 * dr);
                vec![
                    (idx(ji, mi), 3.0 * q),
                    (idx(ji - 1, mi), -4.0 * q),
                    (idx(ji - 2, mi), q),
                ]
            } else {
                vec![(idx(ji + 1, mi), 0.5 / dr), (idx(ji - 1, mi), -0.5 / dr)]
            };
            // Cartesian gradient g = K^T (U_r, U_theta)
            let mut gx = Vec::new();
            axpy(&mut gx, k[0][0], &u_r);
            axpy(&mut gx, k[1][0], &u_t);
            let mut gy = Vec::new();
            axpy(&mut gy, k[0][1], &u_r);
            axpy(&mut gy, k[1][1], &u_t);
            let mut st = NodeStencil {
                d1: finish(gx.clone()),
                d2: finish(gy.clone()),
                ..Default::default()
            };
            if grid.kind(idx(ji, mi)) == NodeKind::Interior {
                let u_rr = vec![
                    (idx(ji + 1, mi), 1.0 / (dr * dr)),
                    (idx(ji, mi), -2.0 / (dr * dr)),
                    (idx(ji - 1, mi), 1.0 / (dr * dr)),
                ];
                let u_tt = vec![
                    (idx(ji, mi + 1), 1.0 / cd),
                    (idx(ji, mi), -2.0 / cd),
                    (idx(ji, mi - 1), 1.0 / cd),
                ];
                // radial first derivative: fourth order where two rings exist on
                // both sides (phantoms included), since the chain rule divides
                // it by r and r is O(dr) next to the pole
                let radial = |mm: isize| -> Weights {
                    if j + 2 < nr {
                        let q = 1.0 / (12.0 * dr);
                        vec![
                            (idx(ji - 2, mm), q),
                            (idx(ji - 1, mm), -8.0 * q),
                            (idx(ji + 1, mm), 8.0 * q),
                            (idx(ji + 2, mm), -q),
                        ]
                    } else {
                        vec![(idx(ji + 1, mm), 0.5 / dr), (idx(ji - 1, mm), -0.5 / dr)]
                    }
                };
                let mut u_rt = Vec::new();
                axpy(&mut u_rt, 0.5 / sd, &radial(mi + 1));
                axpy(&mut u_rt, -0.5 / sd, &radial(mi - 1));
                let u_r4 = radial(mi);
                let mut gx = Vec::new();
                axpy(&mut gx, k[0][0], &u_r4);
                axpy(&mut gx, k[1][0], &u_t);
                let mut gy = Vec::new();
                axpy(&mut gy, k[0][1], &u_r4);
                axpy(&mut gy, k[1][1], &u_t);
                // M = U'' - g_x X''_x - g_y X''_y in (r, theta)
                let m_rr = u_rr;
                let mut m_rt = u_rt;
                axpy(&mut m_rt, a * s, &gx);
                axpy(&mut m_rt, -b * c, &gy);
                let mut m_tt = u_tt;
                axpy(&mut m_tt, a * r * c, &gx);
                axpy(&mut m_tt, b * r * s, &gy);
                let mm = [[&m_rr, &m_rt], [&m_rt, &m_tt]];
                // H_ij = sum_pq K_pi M_pq K_qj
                let entry = |i: usize, jj: usize| -> Weights {
                    let mut w = Vec::new();
                    for p in 0..2 {
                        for q in 0..2 {
                            axpy(&mut w, k[p][i] * k[q][jj], mm[p][q]);
                        }
                    }
                    finish(w)
                };
                st.d11 = entry(0, 0);
                st.d12 = entry(0, 1);
                st.d22 = entry(1, 1);
            }
            out.push(st);
        }
    }
    out
}

/// Outward normal derivative stencil of one boundary node, split into the
/// node's own weight and the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalStencil {
    pub node: usize,
    pub diag: f64,
    pub off: Weights,
}

impl NormalStencil {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.diag * values[self.node] + apply(&self.off, values)
    }
}

/// Per-boundary-node normal-derivative stencils and the scalar solver for
/// the implicit relation `u_nu = phi(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryClosure {
    rows: Vec<NormalStencil>,
    points: Vec<Point>,
}

pub const CLOSURE_TOL: f64 = 1e-12;
pub const CLOSURE_MAX_ITER: usize = 50;
const MAX_SWEEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureReport {
    pub sweeps: usize,
    pub max_residual: f64,
}

impl BoundaryClosure {
    pub fn new(grid: &Grid) -> Self {
        let rows: Vec<NormalStencil> = match grid.backend() {
            Backend::Cartesian { n, h, .. } => grid
                .boundary()
                .iter()
                .map(|&p| cartesian_normal(p, n, h))
                .collect(),
            Backend::Polar {
                nr,
                ntheta,
                dr,
                dtheta,
                a,
                b,
            } => grid
                .boundary()
                .iter()
                .map(|&p| {
                    let m = p % ntheta;
                    let th = m as f64 * dtheta;
                    let nu = grid.normal(p).expect("boundary node has a normal");
                    let k = inverse_jacobian(a, b, 1.0, th);
                    let alpha = k[0][0] * nu[0] + k[0][1] * nu[1];
                    let beta = k[1][0] * nu[0] + k[1][1] * nu[1];
                    let base = (nr - 1) * ntheta;
                    let q = alpha / (2.0 * dr);
                    let mut off = vec![
                        (p - ntheta, -4.0 * q),
                        (p - 2 * ntheta, q),
                        (base + (m + 1) % ntheta, 0.5 * beta / dtheta.sin()),
                        (base + (m + ntheta - 1) % ntheta, -0.5 * beta / dtheta.sin()),
                    ];
                    off = finish(off);
                    NormalStencil {
                        node: p,
                        diag: 3.0 * q,
                        off,
                    }
                })
                .collect(),
        };
        let points = grid.boundary().iter().map(|&p| grid.point(p)).collect();
        Self { rows, points }
    }

    pub fn rows(&self) -> &[NormalStencil] {
        &self.rows
    }

    /// Discrete `u_nu - phi(x, u)` at every boundary node.
    pub fn residuals<F>(&self, values: &[f64], phi: F) -> Result<Vec<f64>, DiscError>
    where
        F: Fn(Point, f64) -> Result<(f64, f64), DiscError>,
    {
        self.rows
            .iter()
            .zip(&self.points)
            .map(|(row, &x)| Ok(row.apply(values) - phi(x, values[row.node])?.0))
            .collect()
    }

    /// Returns a closed copy of `u` whose boundary values satisfy the
    /// discrete condition.
    pub fn apply_neumann<F>(&self, u: &GridFn, phi: F) -> Result<GridFn, DiscError>
    where
        F: Fn(Point, f64) -> Result<(f64, f64), DiscError>,
    {
        let mut values = u.values().to_vec();
        self.close_in_place(&mut values, phi)?;
        let mut out = GridFn::new(u.grid().clone(), values)?;
        out.mark_closed();
        Ok(out)
    }

    /// Gauss-Seidel over the boundary nodes in storage order; each node
    /// solves its scalar relation exactly. `phi` returns `(phi, phi_u)`.
    pub fn close_in_place<F>(&self, values: &mut [f64], phi: F) -> Result<ClosureReport, DiscError>
    where
        F: Fn(Point, f64) -> Result<(f64, f64), DiscError>,
    {
        for sweep in 1..=MAX_SWEEPS {
            let mut change: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for (row, &x) in self.rows.iter().zip(&self.points) {
                let c = apply(&row.off, values);
                let old = values[row.node];
                let v = solve_scalar(row, x, c, old, &phi)?;
                values[row.node] = v;
                change = change.max((v - old).abs());
                scale = scale.max(v.abs());
            }
            if change <= 1e-14 * (1.0 + scale) {
                let res = self.residuals(values, &phi)?;
                let max_residual = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
                return Ok(ClosureReport {
                    sweeps: sweep,
                    max_residual,
                });
            }
        }
        let res = self.residuals(values, &phi)?;
        let (i, r) = res
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, br), (i, r)| {
                if r.abs() > br {
                    (i, r.abs())
                } else {
                    (bi, br)
                }
            });
        Err(DiscError::NoConvergence {
            node: self.rows[i].node,
            residual: r,
        })
    }
}

fn cartesian_normal(p: usize, n: usize, h: f64) -> NormalStencil {
    let (i, j) = (p % n, p / n);
    let q = 1.0 / (2.0 * h);
    // one-sided outward derivative along an axis: +1 at the high end
    let along = |k: usize, at: &dyn Fn(usize) -> usize| -> Option<Weights> {
        if k == 0 {
            Some(vec![(at(0), 3.0 * q), (at(1), -4.0 * q), (at(2), q)])
        } else if k == n - 1 {
            Some(vec![(at(n - 1), 3.0 * q), (at(n - 2), -4.0 * q), (at(n - 3), q)])
        } else {
            None
        }
    };
    let sx = along(i, &|ii| j * n + ii);
    let sy = along(j, &|jj| jj * n + i);
    let w = match (sx, sy) {
        // corner: mean of the two side conditions
        (Some(x), Some(y)) => {
            let mut w = Vec::new();
            axpy(&mut w, 0.5, &x);
            axpy(&mut w, 0.5, &y);
            w
        }
        (Some(x), None) => x,
        (None, Some(y)) => y,
        (None, None) => unreachable!("interior node passed as boundary"),
    };
    let w = finish(w);
    let diag = w.iter().find(|&&(k, _)| k == p).map(|&(_, c)| c).unwrap_or(0.0);
    let off = w.into_iter().filter(|&(k, _)| k != p).collect();
    NormalStencil { node: p, diag, off }
}

/// Solves `diag v + c = phi(x, v)` for `v`. The left side minus the right
/// side is increasing when `phi_u <= 0`; a bracket is found first, then
/// Newton steps are kept inside it.
fn solve_scalar<F>(
    row: &NormalStencil,
    x: Point,
    c: f64,
    start: f64,
    phi: &F,
) -> Result<f64, DiscError>
where
    F: Fn(Point, f64) -> Result<(f64, f64), DiscError>,
{
    let w = row.diag;
    let eval = |v: f64| -> Result<(f64, f64), DiscError> {
        let (p, pu) = phi(x, v)?;
        Ok((w * v + c - p, w - pu))
    };
    let tol = |v: f64, p: f64| CLOSURE_TOL * (1.0 + (w * v).abs().max((c - p).abs()) * 1e-3);
    let (r0, d0) = eval(start)?;
    let p0 = w * start + c - r0;
    if r0.abs() <= tol(start, p0) {
        return Ok(start);
    }
    // bracket search, starting from the Newton step size
    let mut step = if d0 > 0.0 { (r0 / d0).abs() } else { 1.0 }.max(1e-8);
    let (mut lo, mut hi);
    if r0 > 0.0 {
        hi = start;
        lo = start - step;
        let mut k = 0;
        while eval(lo)?.0 > 0.0 {
            hi = lo;
            step *= 2.0;
            lo -= step;
            k += 1;
            if k > 80 {
                return Err(no_bracket(row, x));
            }
        }
    } else {
        lo = start;
        hi = start + step;
        let mut k = 0;
        while eval(hi)?.0 < 0.0 {
            lo = hi;
            step *= 2.0;
            hi += step;
            k += 1;
            if k > 80 {
                return Err(no_bracket(row, x));
            }
        }
    }
    let mut v = if r0 > 0.0 { hi } else { lo };
    for _ in 0..CLOSURE_MAX_ITER {
        let (r, d) = eval(v)?;
        let p = w * v + c - r;
        if r.abs() <= tol(v, p) {
            return Ok(v);
        }
        if r > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let newton = if d > 0.0 { v - r / d } else { f64::NAN };
        v = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * (1.0 + v.abs()) {
            return Ok(v);
        }
    }
    let (r, _) = eval(v)?;
    Err(DiscError::NoConvergence {
        node: row.node,
        residual: r.abs(),
    })
}

fn no_bracket(row: &NormalStencil, x: Point) -> DiscError {
    DiscError::NoBracket {
        node: row.node,
        x: x[0],
        y: x[1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use std::sync::Arc;

    fn square(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cartesian(Domain::square(1.0).unwrap(), n).unwrap())
    }

    fn disk(nr: usize, nt: usize) -> Arc<Grid> {
        Arc::new(Grid::polar(Domain::disk(1.0).unwrap(), nr, nt).unwrap())
    }

    fn closed(grid: Arc<Grid>, f: impl Fn(Point) -> f64) -> GridFn {
        let mut u = GridFn::from_fn(grid, f);
        u.mark_closed();
        u
    }

    #[test]
    fn stencil_sums() {
        for g in [square(9), disk(6, 12)] {
            let st = Stencils::new(&g);
            for p in 0..g.len() {
                let s = st.node(p);
                for w in [&s.d1, &s.d2, &s.d11, &s.d12, &s.d22] {
                    let sum: f64 = w.iter().map(|e| e.1).sum();
                    let scale: f64 = w.iter().map(|e| e.1.abs()).sum::<f64>() + 1.0;
                    assert!(sum.abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn cartesian_quadratics_exact() {
        let g = square(11);
        let st = Stencils::new(&g);
        let u = closed(g.clone(), |p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        for h in st.hessian(&u).unwrap() {
            assert!((h.get(0, 0) - 1.0).abs() < 1e-11);
            assert!(h.get(0, 1).abs() < 1e-11);
            assert!((h.get(1, 1) - 1.0).abs() < 1e-11);
        }
        let u = closed(g.clone(), |p| p[0] * p[1]);
        for h in st.hessian(&u).unwrap() {
            assert!(h.get(0, 0).abs() < 1e-11);
            assert!((h.get(0, 1) - 1.0).abs() < 1e-11);
        }
        let u = closed(g.clone(), |p| 1.0 + 2.0 * p[0] - p[1] + p[0] * p[1] - 0.5 * p[1] * p[1]);
        for (i, d) in st.gradient(&u).unwrap().into_iter().enumerate() {
            let p = g.point(i);
            assert!((d[0] - (2.0 + p[1])).abs() < 1e-11);
            assert!((d[1] - (-1.0 + p[0] - p[1])).abs() < 1e-11);
        }
    }

    #[test]
    fn linear_gradient_exact_on_polar() {
        let g = Arc::new(Grid::polar(Domain::ellipse(1.5, 1.0).unwrap(), 8, 16).unwrap());
        let st = Stencils::new(&g);
        let u = closed(g.clone(), |p| 3.0 * p[0] - p[1]);
        for d in st.gradient(&u).unwrap() {
            assert!((d[0] - 3.0).abs() < 1e-12 && (d[1] + 1.0).abs() < 1e-12);
        }
        for h in st.hessian(&u).unwrap() {
            assert!(h.norm_inf() < 1e-10);
        }
        let u = closed(g, |_| 4.0);
        for d in st.gradient(&u).unwrap() {
            assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12);
        }
    }

    #[test]
    fn unclosed_field_is_rejected() {
        let g = square(9);
        let u = GridFn::constant(g.clone(), 1.0);
        assert_eq!(Stencils::new(&g).hessian(&u), Err(DiscError::Unclosed));
    }

    fn hess_error(g: Arc<Grid>) -> f64 {
        let st = Stencils::new(&g);
        let u = closed(g.clone(), |p| p[0].sin() * p[1].cos());
        st.hessian(&u)
            .unwrap()
            .iter()
            .zip(g.interior())
            .map(|(h, &i)| {
                let [x, y] = g.point(i);
                let exact = [
                    -x.sin() * y.cos(),
                    -x.cos() * y.sin(),
                    -x.sin() * y.cos(),
                ];
                (h.get(0, 0) - exact[0])
                    .abs()
                    .max((h.get(0, 1) - exact[1]).abs())
                    .max((h.get(1, 1) - exact[2]).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn hessian_second_order() {
        let e1 = hess_error(square(17));
        let e2 = hess_error(square(33));
        let order = (e1 / e2).ln() / (32.0f64 / 16.0).ln();
        assert!((1.8..=2.2).contains(&order), "cartesian order {order}");
        let dom = Domain::ellipse(1.3, 1.0).unwrap();
        let g1 = Arc::new(Grid::polar(dom, 16, 32).unwrap());
        let g2 = Arc::new(Grid::polar(dom, 32, 64).unwrap());
        let ratio = g1.h() / g2.h();
        let order = (hess_error(g1) / hess_error(g2)).ln() / ratio.ln();
        assert!((1.8..=2.2).contains(&order), "polar order {order}");
    }

    #[test]
    fn closure_zero_flux_on_symmetric_data() {
        let g = disk(8, 16);
        let bc = BoundaryClosure::new(&g);
        let u = GridFn::from_fn(g.clone(), |p| p[0] * p[0] + p[1] * p[1]);
        let out = bc.apply_neumann(&u, |_, _| Ok((0.0, 0.0))).unwrap();
        let nt = 16;
        let v = out.values();
        for &b in g.boundary() {
            let expect = (4.0 * v[b - nt] - v[b - 2 * nt]) / 3.0;
            assert!((v[b] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn closure_solves_linear_relation() {
        let g = square(9);
        let bc = BoundaryClosure::new(&g);
        let u = GridFn::from_fn(g.clone(), |p| (p[0] + 2.0 * p[1]).cos());
        let out = bc.apply_neumann(&u, |_, u| Ok((-u, -1.0))).unwrap();
        for row in bc.rows() {
            let r = row.apply(out.values()) + out.values()[row.node];
            assert!(r.abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn closure_reproduces_manufactured_boundary() {
        let dom = Domain::ellipse(1.4, 1.0).unwrap();
        let exact = |p: Point| (0.7 * p[0]).sin() + p[1] * p[1];
        let mut errs = Vec::new();
        for (nr, nt) in [(16, 32), (32, 64)] {
            let g = Arc::new(Grid::polar(dom, nr, nt).unwrap());
            let bc = BoundaryClosure::new(&g);
            let u = GridFn::from_fn(g.clone(), exact);
            let flux = |x: Point, _u: f64| {
                let n = dom.normal(x).map_err(DiscError::from)?;
                Ok((0.7 * (0.7 * x[0]).cos() * n[0] + 2.0 * x[1] * n[1], 0.0))
            };
            let out = bc.apply_neumann(&u, flux).unwrap();
            let err = g
                .boundary()
                .iter()
                .map(|&b| (out.values()[b] - exact(g.point(b))).abs())
                .fold(0.0, f64::max);
            errs.push((err, g.h()));
        }
        let order = (errs[0].0 / errs[1].0).ln() / (errs[0].1 / errs[1].1).ln();
        assert!(order > 1.7, "{errs:?}");
    }

    #[test]
    fn closure_idempotent() {
        let g = Arc::new(Grid::cartesian(Domain::square(1.0).unwrap(), 12).unwrap());
        let bc = BoundaryClosure::new(&g);
        let u = GridFn::from_fn(g, |p| p[0].exp() * p[1]);
        let phi = |x: Point, u: f64| Ok((x[0] - 0.5 * u - 0.1 * u.powi(3), -0.5 - 0.3 * u * u));
        let once = bc.apply_neumann(&u, phi).unwrap();
        let twice = bc.apply_neumann(&once, phi).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn increasing_phi_fails_to_bracket() {
        let g = disk(8, 16);
        let bc = BoundaryClosure::new(&g);
        let u = GridFn::constant(g, 0.0);
        let err = bc.apply_neumann(&u, |_, u| Ok((1.0 + 1e4 * u, 1e4))).unwrap_err();
        assert!(matches!(err, DiscError::NoBracket { .. }), "{err:?}");
    }
}
