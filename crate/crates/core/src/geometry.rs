//! Convex planar domains and the structured grids laid over them.
//!
//! Disks and ellipses use a boundary-conforming polar grid through the map
//! `x = (a r cos(theta), b r sin(theta))`, `r in (0, 1]`, with half-offset
//! radial nodes so that no node sits on the pole. The square uses a plain
//! Cartesian tensor grid.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("domain size must be positive and finite")]
    BadSize,
    #[error("point ({0}, {1}) is not on the boundary")]
    NotOnBoundary(f64, f64),
    #[error("resolution too small: {0}")]
    Resolution(String),
    #[error("wrong grid backend for this domain")]
    Backend,
    #[error("point ({0}, {1}) lies outside the grid")]
    Outside(f64, f64),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
}

/// Convex domain centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
    Square { half_width: f64 },
}

fn positive(v: f64) -> Result<f64, GeomError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(GeomError::BadSize)
    }
}

impl Domain {
    pub fn disk(radius: f64) -> Result<Self, GeomError> {
        Ok(Domain::Disk {
            radius: positive(radius)?,
        })
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self, GeomError> {
        Ok(Domain::Ellipse {
            a: positive(a)?,
            b: positive(b)?,
        })
    }

    pub fn square(half_width: f64) -> Result<Self, GeomError> {
        Ok(Domain::Square {
            half_width: positive(half_width)?,
        })
    }

    /// The square has corners; the convergence theory assumes a smooth,
    /// strictly convex boundary.
    pub fn nonsmooth(&self) -> bool {
        matches!(self, Domain::Square { .. })
    }

    /// Semi-axes of the polar map (equal for a disk).
    fn axes(&self) -> Option<(f64, f64)> {
        match *self {
            Domain::Disk { radius } => Some((radius, radius)),
            Domain::Ellipse { a, b } => Some((a, b)),
            Domain::Square { .. } => None,
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Domain::Disk { radius } => radius,
            Domain::Ellipse { a, b } => a.max(b),
            Domain::Square { half_width } => half_width,
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        match *self {
            Domain::Disk { radius } => x[0].hypot(x[1]) <= radius,
            Domain::Ellipse { a, b } => (x[0] / a).powi(2) + (x[1] / b).powi(2) <= 1.0,
            Domain::Square { half_width } => x[0].abs() <= half_width && x[1].abs() <= half_width,
        }
    }

    /// Unsigned distance to the boundary.
    pub fn distance(&self, x: Point) -> f64 {
        match *self {
            Domain::Disk { radius } => (radius - x[0].hypot(x[1])).abs(),
            Domain::Ellipse { a, b } => ellipse_distance(a, b, x),
            Domain::Square { half_width: l } => {
                let dx = x[0].abs() - l;
                let dy = x[1].abs() - l;
                if dx <= 0.0 && dy <= 0.0 {
                    (-dx).min(-dy)
                } else {
                    dx.max(0.0).hypot(dy.max(0.0))
                }
            }
        }
    }

    /// Outward unit normal at a boundary point. Square corners get the
    /// diagonal direction.
    pub fn normal(&self, x: Point) -> Result<Point, GeomError> {
        if self.distance(x) > 1e-10 * (1.0 + self.scale()) {
            return Err(GeomError::NotOnBoundary(x[0], x[1]));
        }
        let v = match *self {
            Domain::Disk { .. } => x,
            Domain::Ellipse { a, b } => [x[0] / (a * a), x[1] / (b * b)],
            Domain::Square { half_width: l } => {
                let tol = 1e-10 * (1.0 + l);
                let on_x = (x[0].abs() - l).abs() <= tol;
                let on_y = (x[1].abs() - l).abs() <= tol;
                [
                    if on_x { x[0].signum() } else { 0.0 },
                    if on_y { x[1].signum() } else { 0.0 },
                ]
            }
        };
        let n = v[0].hypot(v[1]);
        Ok([v[0] / n, v[1] / n])
    }

    /// Trapezoid rule for the boundary integral of `g` with `panels` panels
    /// (per side on the square, a multiple of four is split evenly).
    pub fn boundary_integral(&self, g: impl Fn(Point) -> f64, panels: usize) -> f64 {
        let panels = panels.max(4);
        match *self {
            Domain::Square { half_width: l } => {
                let per_side = (panels / 4).max(1);
                let h = 2.0 * l / per_side as f64;
                let corners = [[l, -l], [l, l], [-l, l], [-l, -l]];
                let mut total = 0.0;
                for s in 0..4 {
                    let p = corners[s];
                    let q = corners[(s + 1) % 4];
                    for i in 0..=per_side {
                        let t = i as f64 / per_side as f64;
                        let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                        let w = if i == 0 || i == per_side { 0.5 } else { 1.0 };
                        total += w * h * g(x);
                    }
                }
                total
            }
            _ => {
                let (a, b) = self.axes().unwrap();
                let dth = TAU / panels as f64;
                (0..panels)
                    .map(|i| {
                        let th = i as f64 * dth;
                        let speed = (a * th.sin()).hypot(b * th.cos());
                        g([a * th.cos(), b * th.sin()]) * speed * dth
                    })
                    .sum()
            }
        }
    }

    /// Area integral of `g` by tensor Gauss-Legendre (radially) and the
    /// periodic trapezoid rule (angularly), or Gauss-Legendre squared on
    /// the square; `panels` controls the number of subintervals.
    pub fn area_integral(&self, g: impl Fn(Point) -> f64, panels: usize) -> f64 {
        let panels = panels.max(1);
        let (gx, gw) = gauss_legendre_8();
        match *self {
            Domain::Square { half_width: l } => {
                let h = 2.0 * l / panels as f64;
                let mut total = 0.0;
                for pi in 0..panels {
                    for pj in 0..panels {
                        for (xi, wi) in gx.iter().zip(gw.iter()) {
                            for (yj, wj) in gx.iter().zip(gw.iter()) {
                                let x = -l + h * (pi as f64 + 0.5 * (xi + 1.0));
                                let y = -l + h * (pj as f64 + 0.5 * (yj + 1.0));
                                total += 0.25 * h * h * wi * wj * g([x, y]);
                            }
                        }
                    }
                }
                total
            }
            _ => {
                let (a, b) = self.axes().unwrap();
                let n_theta = 8 * panels;
                let dth = TAU / n_theta as f64;
                let dr = 1.0 / panels as f64;
                let mut total = 0.0;
                for pr in 0..panels {
                    for (ri, wi) in gx.iter().zip(gw.iter()) {
                        let r = dr * (pr as f64 + 0.5 * (ri + 1.0));
                        for m in 0..n_theta {
                            let th = m as f64 * dth;
                            let x = [a * r * th.cos(), b * r * th.sin()];
                            total += 0.5 * dr * wi * dth * a * b * r * g(x);
                        }
                    }
                }
                total
            }
        }
    }
}

fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    let x = [
        -0.960_289_856_497_536_2,
        -0.796_666_477_413_626_7,
        -0.525_532_409_916_329,
        -0.183_434_642_495_649_8,
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_2,
    ];
    let w = [
        0.101_228_536_290_376_3,
        0.222_381_034_453_374_5,
        0.313_706_645_877_887_3,
        0.362_683_783_378_362,
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    (x, w)
}

/// Distance from `p` to the ellipse `(x/a)^2 + (y/b)^2 = 1`, by reducing to
/// the first quadrant and root-finding on the Lagrange multiplier.
fn ellipse_distance(a: f64, b: f64, p: Point) -> f64 {
    // work with e0 >= e1
    let (e0, e1, y0, y1) = if a >= b {
        (a, b, p[0].abs(), p[1].abs())
    } else {
        (b, a, p[1].abs(), p[0].abs())
    };
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1).powi(2);
            let s = root_on_multiplier(r0, z0, z1, g);
            let x0 = r0 * y0 / (s + r0);
            let x1 = y1 / (s + 1.0);
            (x0 - y0).hypot(x1 - y1)
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer = e0 * y0;
        let denom = e0 * e0 - e1 * e1;
        if numer < denom {
            let xde = numer / denom;
            let x0 = e0 * xde;
            let x1 = e1 * (1.0 - xde * xde).max(0.0).sqrt();
            (x0 - y0).hypot(x1)
        } else {
            (y0 - e0).abs()
        }
    }
}

fn root_on_multiplier(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..200 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let val = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if val > 0.0 {
            s0 = s;
        } else if val < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    /// `nr` rings at `r_j = (j + 1/2) dr`, the last one on the boundary, and
    /// `ntheta` (even) angles `theta_m = m dtheta`. Node index `j * ntheta + m`.
    Polar {
        nr: usize,
        ntheta: usize,
        dr: f64,
        dtheta: f64,
        a: f64,
        b: f64,
    },
    /// `n x n` nodes spaced `h` on `[-L, L]^2`. Node index `j * n + i` with
    /// `i` along x.
    Cartesian { n: usize, h: f64, half_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    backend: Backend,
    points: Vec<Point>,
    kinds: Vec<NodeKind>,
    normals: Vec<Option<Point>>,
    weights: Vec<f64>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

pub const MIN_RINGS: usize = 4;
pub const MIN_ANGLES: usize = 8;
pub const MIN_CARTESIAN: usize = 8;

impl Grid {
    /// Polar grid over a disk or ellipse.
    pub fn polar(domain: Domain, nr: usize, ntheta: usize) -> Result<Self, GeomError> {
        let (a, b) = domain.axes().ok_or(GeomError::Backend)?;
        if nr < MIN_RINGS {
            return Err(GeomError::Resolution(format!(
                "need at least {MIN_RINGS} rings, got {nr}"
            )));
        }
        if ntheta < MIN_ANGLES || !ntheta.is_multiple_of(2) {
            return Err(GeomError::Resolution(format!(
                "need an even angle count >= {MIN_ANGLES}, got {ntheta}"
            )));
        }
        let dr = 1.0 / (nr as f64 - 0.5);
        let dtheta = TAU / ntheta as f64;
        let total = nr * ntheta;
        let mut points = Vec::with_capacity(total);
        let mut kinds = Vec::with_capacity(total);
        let mut normals = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for j in 0..nr {
            let r = if j == nr - 1 {
                1.0
            } else {
                (j as f64 + 0.5) * dr
            };
            for m in 0..ntheta {
                let th = m as f64 * dtheta;
                let (s, c) = th.sin_cos();
                points.push([a * r * c, b * r * s]);
                if j == nr - 1 {
                    kinds.push(NodeKind::Boundary);
                    let nx = c / a;
                    let ny = s / b;
                    let len = nx.hypot(ny);
                    normals.push(Some([nx / len, ny / len]));
                    weights.push((a * s).hypot(b * c) * dtheta);
                } else {
                    kinds.push(NodeKind::Interior);
                    normals.push(None);
                    weights.push(0.0);
                }
            }
        }
        Ok(Self::assemble(
            domain,
            Backend::Polar {
                nr,
                ntheta,
                dr,
                dtheta,
                a,
                b,
            },
            points,
            kinds,
            normals,
            weights,
        ))
    }

    /// Cartesian grid over the square.
    pub fn cartesian(domain: Domain, n: usize) -> Result<Self, GeomError> {
        let Domain::Square { half_width: l } = domain else {
            return Err(GeomError::Backend);
        };
        if n < MIN_CARTESIAN {
            return Err(GeomError::Resolution(format!(
                "need at least {MIN_CARTESIAN} nodes per side, got {n}"
            )));
        }
        let h = 2.0 * l / (n - 1) as f64;
        let mut points = Vec::with_capacity(n * n);
        let mut kinds = Vec::with_capacity(n * n);
        let mut normals = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        let sqrt_half = 0.5f64.sqrt();
        for j in 0..n {
            for i in 0..n {
                let x = if i == n - 1 { l } else { -l + i as f64 * h };
                let y = if j == n - 1 { l } else { -l + j as f64 * h };
                points.push([x, y]);
                let sx = if i == 0 {
                    -1.0
                } else if i == n - 1 {
                    1.0
                } else {
                    0.0
                };
                let sy = if j == 0 {
                    -1.0
                } else if j == n - 1 {
                    1.0
                } else {
                    0.0
                };
                if sx == 0.0 && sy == 0.0 {
                    kinds.push(NodeKind::Interior);
                    normals.push(None);
                    weights.push(0.0);
                } else {
                    kinds.push(NodeKind::Boundary);
                    if sx != 0.0 && sy != 0.0 {
                        normals.push(Some([sx * sqrt_half, sy * sqrt_half]));
                    } else {
                        normals.push(Some([sx, sy]));
                    }
                    weights.push(h);
                }
            }
        }
        Ok(Self::assemble(
            domain,
            Backend::Cartesian {
                n,
                h,
                half_width: l,
            },
            points,
            kinds,
            normals,
            weights,
        ))
    }

    /// Polar grid for disks and ellipses, Cartesian for the square;
    /// `res` is `(nr, ntheta)` or `(n, _)`.
    pub fn build(domain: Domain, res: (usize, usize)) -> Result<Self, GeomError> {
        match domain {
            Domain::Square { .. } => Self::cartesian(domain, res.0),
            _ => Self::polar(domain, res.0, res.1),
        }
    }

    fn assemble(
        domain: Domain,
        backend: Backend,
        points: Vec<Point>,
        kinds: Vec<NodeKind>,
        normals: Vec<Option<Point>>,
        weights: Vec<f64>,
    ) -> Self {
        let interior = (0..kinds.len())
            .filter(|&i| kinds[i] == NodeKind::Interior)
            .collect();
        let boundary = (0..kinds.len())
            .filter(|&i| kinds[i] == NodeKind::Boundary)
            .collect();
        Self {
            domain,
            backend,
            points,
            kinds,
            normals,
            weights,
            interior,
            boundary,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn normal(&self, i: usize) -> Option<Point> {
        self.normals[i]
    }

    /// Arc-length quadrature weight of a boundary node (zero inside).
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Smallest physical node spacing, which sets the explicit step limit.
    pub fn h_min(&self) -> f64 {
        match self.backend {
            Backend::Cartesian { h, .. } => h,
            Backend::Polar {
                dr, dtheta, a, b, ..
            } => {
                let m = a.min(b);
                (dr * m).min(0.5 * dr * dtheta * m)
            }
        }
    }

    /// A representative spacing for error scaling: the radial (or Cartesian)
    /// step in physical units.
    pub fn h(&self) -> f64 {
        match self.backend {
            Backend::Cartesian { h, .. } => h,
            Backend::Polar { dr, a, b, .. } => dr * a.max(b),
        }
    }

    pub fn describe(&self) -> String {
        match self.backend {
            Backend::Polar { nr, ntheta, .. } => format!("polar {nr}x{ntheta}"),
            Backend::Cartesian { n, .. } => format!("cartesian {n}x{n}"),
        }
    }

    /// Bilinear interpolation of nodal `values` at `x` in computational
    /// coordinates. Inside the innermost polar ring the pole rule
    /// `u(-r, theta) = u(r, theta + pi)` supplies the missing side.
    pub fn interpolate(&self, values: &[f64], x: Point) -> Result<f64, GeomError> {
        if values.len() != self.len() {
            return Err(GeomError::Length {
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(self
            .interpolation_weights(x)?
            .iter()
            .map(|&(i, w)| w * values[i])
            .sum())
    }

    /// Node weights of the bilinear interpolant at `x`; they sum to one.
    pub fn interpolation_weights(&self, x: Point) -> Result<Vec<(usize, f64)>, GeomError> {
        let tol = 1e-12;
        match self.backend {
            Backend::Cartesian { n, h, half_width: l } => {
                let fx = (x[0] + l) / h;
                let fy = (x[1] + l) / h;
                let top = (n - 1) as f64;
                if !(fx >= -tol && fx <= top + tol && fy >= -tol && fy <= top + tol) {
                    return Err(GeomError::Outside(x[0], x[1]));
                }
                let i = (fx.floor().max(0.0) as usize).min(n - 2);
                let j = (fy.floor().max(0.0) as usize).min(n - 2);
                let tx = fx - i as f64;
                let ty = fy - j as f64;
                let id = |ii: usize, jj: usize| jj * n + ii;
                Ok(vec![
                    (id(i, j), (1.0 - tx) * (1.0 - ty)),
                    (id(i + 1, j), tx * (1.0 - ty)),
                    (id(i, j + 1), (1.0 - tx) * ty),
                    (id(i + 1, j + 1), tx * ty),
                ])
            }
            Backend::Polar {
                nr,
                ntheta,
                dr,
                dtheta,
                a,
                b,
            } => {
                let xi = x[0] / a;
                let eta = x[1] / b;
                let r = xi.hypot(eta);
                if r > 1.0 + tol {
                    return Err(GeomError::Outside(x[0], x[1]));
                }
                let th = eta.atan2(xi).rem_euclid(TAU);
                let fm = th / dtheta;
                let m0 = (fm.floor() as usize) % ntheta;
                let tm = fm - fm.floor();
                let m1 = (m0 + 1) % ntheta;
                let half = ntheta / 2;
                let id = |j: usize, m: usize| j * ntheta + m;
                let radius = |j: usize| {
                    if j == nr - 1 {
                        1.0
                    } else {
                        (j as f64 + 0.5) * dr
                    }
                };
                let r0 = 0.5 * dr;
                if r < r0 {
                    let s = (r + r0) / (2.0 * r0);
                    return Ok(vec![
                        (id(0, (m0 + half) % ntheta), (1.0 - s) * (1.0 - tm)),
                        (id(0, (m1 + half) % ntheta), (1.0 - s) * tm),
                        (id(0, m0), s * (1.0 - tm)),
                        (id(0, m1), s * tm),
                    ]);
                }
                let mut j = ((r / dr - 0.5).floor().max(0.0) as usize).min(nr - 2);
                while j + 1 < nr - 1 && radius(j + 1) < r {
                    j += 1;
                }
                let s = ((r - radius(j)) / (radius(j + 1) - radius(j))).clamp(0.0, 1.0);
                Ok(vec![
                    (id(j, m0), (1.0 - s) * (1.0 - tm)),
                    (id(j, m1), (1.0 - s) * tm),
                    (id(j + 1, m0), s * (1.0 - tm)),
                    (id(j + 1, m1), s * tm),
                ])
            }
        }
    }
}

/// Scalar field on a grid. `closed` records whether the boundary values
/// currently satisfy the boundary closure.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: Arc<Grid>,
    values: Vec<f64>,
    closed: bool,
}

impl GridFn {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, GeomError> {
        if values.len() != grid.len() {
            return Err(GeomError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            values,
            closed: false,
        })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(Point) -> f64) -> Self {
        let values = grid.points().iter().map(|&p| f(p)).collect();
        Self {
            grid,
            values,
            closed: false,
        }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self {
            grid,
            values,
            closed: false,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access clears the closure flag.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.closed = false;
        &mut self.values
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Declares the boundary values consistent (e.g. exact samples).
    pub fn mark_closed(&mut self) {
        self.closed = true;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn osc(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn at(&self, x: Point) -> Result<f64, GeomError> {
        self.grid.interpolate(&self.values, x)
    }

    /// `x,y,u` rows in node order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: Option<&str>) -> io::Result<()> {
        if let Some(meta) = meta {
            writeln!(w, "# {meta}")?;
        }
        writeln!(w, "x,y,u")?;
        for (p, v) in self.grid.points().iter().zip(&self.values) {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", p[0], p[1], v)?;
        }
        Ok(())
    }
}

/// `max - min` of the pointwise difference of two fields on the same grid.
pub fn osc_difference(a: &GridFn, b: &GridFn) -> f64 {
    let (lo, hi) = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x - y)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d), hi.max(d))
        });
    hi - lo
}

/// Angle helper for callers that need the polar angle of a node.
pub fn polar_angle(m: usize, ntheta: usize) -> f64 {
    2.0 * PI * m as f64 / ntheta as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances() {
        let d = Domain::disk(1.0).unwrap();
        assert_eq!(d.distance([0.0, 0.0]), 1.0);
        assert_eq!(d.distance([1.0, 0.0]), 0.0);
        let e = Domain::ellipse(2.0, 1.0).unwrap();
        assert!((e.distance([0.0, 0.0]) - 1.0).abs() < 1e-14);
        assert!((e.distance([2.0, 0.0])).abs() < 1e-14);
        let s = Domain::square(1.0).unwrap();
        assert_eq!(s.distance([0.5, 0.0]), 0.5);
        assert_eq!(s.distance([0.5, -0.8]), 0.19999999999999996);
    }

    #[test]
    fn ellipse_distance_matches_dense_search() {
        let (a, b) = (2.0, 1.0);
        let e = Domain::ellipse(a, b).unwrap();
        for &p in &[[0.3, 0.2], [1.5, 0.1], [-0.7, -0.6], [0.0, 0.5], [1.2, 0.0]] {
            // dense parametric search, refined by golden-section
            let dist = |t: f64| (a * t.cos() - p[0]).hypot(b * t.sin() - p[1]);
            let n = 20_000;
            let best = (0..n)
                .map(|i| TAU * i as f64 / n as f64)
                .min_by(|x, y| dist(*x).partial_cmp(&dist(*y)).unwrap())
                .unwrap();
            let (mut lo, mut hi) = (best - TAU / n as f64, best + TAU / n as f64);
            for _ in 0..100 {
                let m1 = lo + (hi - lo) * 0.382;
                let m2 = lo + (hi - lo) * 0.618;
                if dist(m1) < dist(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            assert!((e.distance(p) - dist(0.5 * (lo + hi))).abs() < 1e-10, "{p:?}");
        }
    }

    #[test]
    fn normals() {
        let d = Domain::disk(1.0).unwrap();
        assert_eq!(d.normal([1.0, 0.0]).unwrap(), [1.0, 0.0]);
        let s = Domain::square(1.0).unwrap();
        assert_eq!(s.normal([1.0, 0.3]).unwrap(), [1.0, 0.0]);
        let e = Domain::ellipse(2.0, 1.0).unwrap();
        assert_eq!(e.normal([2.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert!(matches!(
            d.normal([0.5, 0.0]),
            Err(GeomError::NotOnBoundary(..))
        ));
    }

    #[test]
    fn boundary_lengths() {
        let d = Domain::disk(1.0).unwrap();
        assert!((d.boundary_integral(|_| 1.0, 4096) - TAU).abs() < 1e-10);
        let s = Domain::square(1.0).unwrap();
        assert_eq!(s.boundary_integral(|_| 1.0, 64), 8.0);
    }

    #[test]
    fn ellipse_perimeter_against_agm() {
        // P = 2 pi / M(a, b) * (a^2 - sum_n 2^(n-1) c_n^2), c_0^2 = a^2 - b^2
        let (a, b): (f64, f64) = (2.0, 1.0);
        let (mut x, mut y) = (a, b);
        let mut sum = 0.5 * (a * a - b * b);
        let mut pow = 0.5;
        for _ in 0..10 {
            let c = 0.5 * (x - y);
            let (nx, ny) = (0.5 * (x + y), (x * y).sqrt());
            pow *= 2.0;
            sum += pow * c * c;
            x = nx;
            y = ny;
        }
        let exact = TAU * (a * a - sum) / x;
        let e = Domain::ellipse(a, b).unwrap();
        assert!((e.boundary_integral(|_| 1.0, 512) - exact).abs() < 1e-8);
        assert!((exact - 9.688448220547675).abs() < 1e-12);
    }

    #[test]
    fn areas() {
        let d = Domain::disk(2.0).unwrap();
        assert!((d.area_integral(|_| 1.0, 4) - 4.0 * PI).abs() < 1e-12);
        let s = Domain::square(1.0).unwrap();
        assert!((s.area_integral(|p| p[0] * p[0], 2) - 4.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn grid_counts() {
        let g = Grid::polar(Domain::disk(1.0).unwrap(), 4, 8).unwrap();
        assert_eq!(g.len(), 32);
        assert_eq!(g.boundary().len(), 8);
        assert!(g.boundary().iter().all(|&i| i >= 24));
        let g = Grid::cartesian(Domain::square(1.0).unwrap(), 9).unwrap();
        assert_eq!(g.len(), 81);
        assert_eq!(g.boundary().len(), 32);
    }

    #[test]
    fn grid_rejects_small_or_mismatched() {
        let d = Domain::disk(1.0).unwrap();
        assert!(matches!(Grid::polar(d, 3, 8), Err(GeomError::Resolution(_))));
        assert!(matches!(Grid::polar(d, 8, 9), Err(GeomError::Resolution(_))));
        let s = Domain::square(1.0).unwrap();
        assert!(matches!(Grid::cartesian(s, 7), Err(GeomError::Resolution(_))));
        assert!(matches!(Grid::polar(s, 8, 8), Err(GeomError::Backend)));
    }

    #[test]
    fn interpolation_reproduces_linear_data() {
        let g = Arc::new(Grid::cartesian(Domain::square(1.0).unwrap(), 9).unwrap());
        let u = GridFn::from_fn(g, |p| 2.0 * p[0] - p[1] + 0.5);
        assert!((u.at([0.13, -0.41]).unwrap() - (0.26 + 0.41 + 0.5)).abs() < 1e-14);
        let g = Arc::new(Grid::polar(Domain::disk(1.0).unwrap(), 16, 32).unwrap());
        let u = GridFn::from_fn(g, |_| 3.0);
        assert!((u.at([0.0, 0.0]).unwrap() - 3.0).abs() < 1e-14);
        assert!((u.at([0.3, 0.7]).unwrap() - 3.0).abs() < 1e-14);
        assert!(u.at([1.5, 0.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = Arc::new(Grid::polar(Domain::disk(1.0).unwrap(), 4, 8).unwrap());
        let u = GridFn::constant(g, 1.0);
        let mut buf = Vec::new();
        u.write_csv(&mut buf, Some("meta")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# meta"));
        assert_eq!(lines.next(), Some("x,y,u"));
        assert_eq!(text.lines().count(), 34);
    }
}
