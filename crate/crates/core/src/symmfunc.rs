//! Elementary symmetric functions of eigenvalue lists and symmetric matrices.
//!
//! Everything here is a pure function of its inputs. Slices are accepted
//! wherever the ordering of the entries does not matter; [`EigenList`] is the
//! sorted (descending) form produced by [`eigen_sym`].

use std::fmt;
use std::ops::Deref;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymmError {
    #[error("order {m} out of range for {n} entries")]
    OrderOutOfRange { m: usize, n: usize },
    #[error("index {i} out of range for {n} entries")]
    IndexOutOfRange { i: usize, n: usize },
    #[error("deletion indices must differ (got {0} twice)")]
    RepeatedIndex(usize),
    #[error("need 0 <= l < k <= n, got k={k}, l={l}, n={n}")]
    InvalidIndices { k: usize, l: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigenvalue list needs at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("non-finite entry")]
    NonFinite,
    #[error("not in Gamma_{k}: sigma_{failing} = {value:e}")]
    NotAdmissible { k: usize, failing: usize, value: f64 },
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// Eigenvalues sorted descending; ties keep their input order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenList(Vec<f64>);

impl EigenList {
    pub fn new(mut values: Vec<f64>) -> Result<Self, SymmError> {
        if values.len() < 2 {
            return Err(SymmError::TooShort(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SymmError::NonFinite);
        }
        // stable sort keeps input order among equal values
        values.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for EigenList {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// The pair `(k, l)` of the quotient `sigma_k / sigma_l` in dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuotientIndices {
    k: usize,
    l: usize,
    n: usize,
}

impl QuotientIndices {
    pub fn new(k: usize, l: usize, n: usize) -> Result<Self, SymmError> {
        if l >= k || k > n {
            return Err(SymmError::InvalidIndices { k, l, n });
        }
        Ok(Self { k, l, n })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check_len(&self, len: usize) -> Result<(), SymmError> {
        if len != self.n {
            return Err(SymmError::DimensionMismatch {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }
}

impl fmt::Display for QuotientIndices {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sigma_{}/sigma_{} (n={})", self.k, self.l, self.n)
    }
}

/// `[sigma_0, ..., sigma_mmax]` of the entries yielded by `values`, by
/// multiplying in one linear factor `(1 + lambda_i t)` at a time.
fn expand<I: IntoIterator<Item = f64>>(values: I, mmax: usize) -> Vec<f64> {
    let mut e = vec![0.0; mmax + 1];
    e[0] = 1.0;
    let mut seen = 0usize;
    for x in values {
        seen += 1;
        for m in (1..=seen.min(mmax)).rev() {
            e[m] += x * e[m - 1];
        }
    }
    e
}

/// All of `sigma_0 .. sigma_mmax`; entries above `lam.len()` are zero.
pub fn sigmas(lam: &[f64], mmax: usize) -> Vec<f64> {
    expand(lam.iter().copied(), mmax)
}

/// All of `sigma_0(lam|i) .. sigma_mmax(lam|i)`.
pub fn sigmas_omit(lam: &[f64], mmax: usize, i: usize) -> Vec<f64> {
    expand(
        lam.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &x)| x),
        mmax,
    )
}

pub fn sigma(lam: &[f64], m: usize) -> Result<f64, SymmError> {
    if m > lam.len() {
        return Err(SymmError::OrderOutOfRange { m, n: lam.len() });
    }
    Ok(sigmas(lam, m)[m])
}

/// `sigma_m` of `lam` with entry `i` (0-based) deleted.
pub fn sigma_omit(lam: &[f64], m: usize, i: usize) -> Result<f64, SymmError> {
    let n = lam.len();
    if i >= n {
        return Err(SymmError::IndexOutOfRange { i, n });
    }
    if m + 1 > n {
        return Err(SymmError::OrderOutOfRange { m, n: n - 1 });
    }
    Ok(sigmas_omit(lam, m, i)[m])
}

/// `sigma_m` of `lam` with entries `i` and `j` (0-based) deleted.
pub fn sigma_omit2(lam: &[f64], m: usize, i: usize, j: usize) -> Result<f64, SymmError> {
    let n = lam.len();
    if i >= n {
        return Err(SymmError::IndexOutOfRange { i, n });
    }
    if j >= n {
        return Err(SymmError::IndexOutOfRange { i: j, n });
    }
    if i == j {
        return Err(SymmError::RepeatedIndex(i));
    }
    if m + 2 > n {
        return Err(SymmError::OrderOutOfRange { m, n: n - 2 });
    }
    let rest = lam
        .iter()
        .enumerate()
        .filter(|&(p, _)| p != i && p != j)
        .map(|(_, &x)| x);
    Ok(expand(rest, m)[m])
}

/// First `1 <= i <= k` with `sigma_i <= slack`, together with that value.
pub fn first_cone_failure(lam: &[f64], k: usize, slack: f64) -> Option<(usize, f64)> {
    let s = sigmas(lam, k);
    (1..=k).find(|&i| !(s[i] > slack)).map(|i| (i, s[i]))
}

/// Membership in the open Garding cone `Gamma_k`.
pub fn in_gamma_k(lam: &[f64], k: usize) -> bool {
    first_cone_failure(lam, k, 0.0).is_none()
}

pub fn in_gamma_k_with_slack(lam: &[f64], k: usize, slack: f64) -> bool {
    first_cone_failure(lam, k, slack).is_none()
}

fn admissible_sigmas(lam: &[f64], q: QuotientIndices) -> Result<Vec<f64>, SymmError> {
    q.check_len(lam.len())?;
    if lam.iter().any(|v| !v.is_finite()) {
        return Err(SymmError::NonFinite);
    }
    let s = sigmas(lam, q.k);
    if let Some(i) = (1..=q.k).find(|&i| !(s[i] > 0.0)) {
        return Err(SymmError::NotAdmissible {
            k: q.k,
            failing: i,
            value: s[i],
        });
    }
    Ok(s)
}

/// `sigma_k / sigma_l` on `Gamma_k`.
pub fn quotient(lam: &[f64], q: QuotientIndices) -> Result<f64, SymmError> {
    let s = admissible_sigmas(lam, q)?;
    Ok(s[q.k] / s[q.l])
}

/// Gradient of `sigma_k / sigma_l` with respect to the eigenvalues:
/// `[sigma_{k-1}(lam|i) sigma_l - sigma_k sigma_{l-1}(lam|i)] / sigma_l^2`.
pub fn d_quotient(lam: &[f64], q: QuotientIndices) -> Result<Vec<f64>, SymmError> {
    let s = admissible_sigmas(lam, q)?;
    let (sk, sl) = (s[q.k], s[q.l]);
    let grad = (0..lam.len())
        .map(|i| {
            let d = sigmas_omit(lam, q.k - 1, i);
            let dl = if q.l == 0 { 0.0 } else { d[q.l - 1] };
            (d[q.k - 1] * sl - sk * dl) / (sl * sl)
        })
        .collect();
    Ok(grad)
}

/// Square symmetric matrix stored densely, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major data; the result is symmetrized exactly by
    /// averaging mirrored entries.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, SymmError> {
        if data.len() != n * n {
            return Err(SymmError::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        let mut m = Self { n, data };
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m.data[i * n + j] + m.data[j * n + i]);
                m.data[i * n + j] = avg;
                m.data[j * n + i] = avg;
            }
        }
        Ok(m)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(d: &[f64]) -> Self {
        Self::from_fn(d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    /// The 2x2 matrix `[[a11, a12], [a12, a22]]`.
    pub fn sym2(a11: f64, a12: f64, a22: f64) -> Self {
        Self {
            n: 2,
            data: vec![a11, a12, a12, a22],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets `a_ij` and `a_ji` together.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Principal submatrix with row and column `i` removed.
    pub fn delete(&self, i: usize) -> SymMatrix {
        let keep: Vec<usize> = (0..self.n).filter(|&p| p != i).collect();
        SymMatrix::from_fn(keep.len(), |a, b| self.get(keep[a], keep[b]))
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::from_fn(self.n, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix::from_fn(self.n, |i, j| c * self.get(i, j))
    }
}

/// Orthogonal matrix whose columns are eigenvectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    n: usize,
    data: Vec<f64>,
}

impl Rotation {
    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Column `j`, the eigenvector of the `j`-th eigenvalue.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// `Q diag(d) Q^T`.
    pub fn conjugate_diag(&self, d: &[f64]) -> SymMatrix {
        SymMatrix::from_fn(self.n, |i, j| {
            (0..self.n)
                .map(|p| self.get(i, p) * d[p] * self.get(j, p))
                .sum()
        })
    }

    /// `max |Q^T Q - I|` entrywise.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.n {
            for b in 0..self.n {
                let dot: f64 = (0..self.n).map(|i| self.get(i, a) * self.get(i, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Spectral decomposition `A = Q diag(lambda) Q^T`, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: EigenList,
    pub vectors: Rotation,
}

const JACOBI_MAX_SWEEPS: usize = 50;
const JACOBI_REL_TOL: f64 = 1e-13;

pub fn eigen_sym(a: &SymMatrix) -> Result<Eigen, SymmError> {
    if !a.is_finite() {
        return Err(SymmError::NonFinite);
    }
    if a.n < 2 {
        return Err(SymmError::TooShort(a.n));
    }
    let (vals, vecs) = if a.n == 2 {
        eigen2(a.get(0, 0), a.get(0, 1), a.get(1, 1))
    } else {
        jacobi(a)?
    };
    Ok(sort_descending(vals, vecs))
}

fn eigen2(a: f64, b: f64, c: f64) -> (Vec<f64>, Rotation) {
    if b == 0.0 {
        return (vec![a, c], Rotation::identity(2));
    }
    let mean = 0.5 * (a + c);
    let rad = (0.5 * (a - c)).hypot(b);
    let hi = mean + rad;
    let lo = mean - rad;
    // eigenvector of `hi`: pick the better conditioned of the two row forms
    let (mut vx, mut vy) = if (hi - a).abs() > (hi - c).abs() {
        (b, hi - a)
    } else {
        (hi - c, b)
    };
    let norm = vx.hypot(vy);
    vx /= norm;
    vy /= norm;
    let q = Rotation {
        n: 2,
        data: vec![vx, -vy, vy, vx],
    };
    (vec![hi, lo], q)
}

fn jacobi(a: &SymMatrix) -> Result<(Vec<f64>, Rotation), SymmError> {
    let n = a.n;
    let mut m = a.data.clone();
    let mut v = Rotation::identity(n);
    let scale = a.norm_frobenius();
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) > JACOBI_REL_TOL * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(SymmError::NoConvergence(sweeps));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let mrp = m[r * n + p];
                    let mrq = m[r * n + q];
                    m[r * n + p] = c * mrp - s * mrq;
                    m[r * n + q] = s * mrp + c * mrq;
                }
                for r in 0..n {
                    let mpr = m[p * n + r];
                    let mqr = m[q * n + r];
                    m[p * n + r] = c * mpr - s * mqr;
                    m[q * n + r] = s * mpr + c * mqr;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    let vrp = v.data[r * n + p];
                    let vrq = v.data[r * n + q];
                    v.data[r * n + p] = c * vrp - s * vrq;
                    v.data[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i * n + i]).collect();
    Ok((vals, v))
}

fn sort_descending(vals: Vec<f64>, vecs: Rotation) -> Eigen {
    let n = vals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut data = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            data[r * n + new] = vecs.get(r, old);
        }
    }
    Eigen {
        values: EigenList(sorted),
        vectors: Rotation { n, data },
    }
}

/// `log(sigma_k/sigma_l)(lambda(A))` and its matrix derivative
/// `F^{ij} = d log(sigma_k/sigma_l) / d a_ij = Q diag(g) Q^T` with
/// `g = grad(quotient) / quotient` evaluated at the eigenvalues.
pub fn log_quotient_matrix(
    a: &SymMatrix,
    q: QuotientIndices,
) -> Result<(f64, SymMatrix), SymmError> {
    q.check_len(a.dim())?;
    let eig = eigen_sym(a)?;
    let value = quotient(&eig.values, q)?;
    let grad = d_quotient(&eig.values, q)?;
    let g: Vec<f64> = grad.iter().map(|d| d / value).collect();
    Ok((value.ln(), eig.vectors.conjugate_diag(&g)))
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
