//! Slow, literal reference computations for tests and verification runs.
//!
//! Nothing in this module calls into the fast paths of `symmfunc`: sigma
//! values come from subset enumeration, matrix sigmas from sums of principal
//! minors, and derivatives from central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::symmfunc::{QuotientIndices, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("subset enumeration limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("order {m} out of range for {n} entries")]
    OrderOutOfRange { m: usize, n: usize },
    #[error("matrix is not in Gamma_{k}")]
    NotAdmissible { k: usize },
    #[error("finite-difference step fell below {h_min:e} while staying in Gamma_k")]
    StepTooSmall { h_min: f64 },
    #[error("no admissible sample after {0} rejections")]
    Exhausted(usize),
    #[error("invalid sampler request: {0}")]
    BadRequest(String),
}

pub const BRUTE_MAX_N: usize = 12;
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Literal `sum over i_1 < ... < i_m of lam_{i_1} ... lam_{i_m}`.
pub fn sigma_brute(lam: &[f64], m: usize) -> Result<f64, OracleError> {
    let n = lam.len();
    if n > BRUTE_MAX_N {
        return Err(OracleError::TooLarge { n, max: BRUTE_MAX_N });
    }
    if m > n {
        return Err(OracleError::OrderOutOfRange { m, n });
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let mut prod = 1.0;
        for (i, &x) in lam.iter().enumerate() {
            if mask & (1 << i) != 0 {
                prod *= x;
            }
        }
        total += prod;
    }
    Ok(total)
}

/// `sigma_m` with the listed positions replaced by zero.
pub fn sigma_brute_deleted(lam: &[f64], m: usize, deleted: &[usize]) -> Result<f64, OracleError> {
    let kept: Vec<f64> = lam
        .iter()
        .enumerate()
        .filter(|(i, _)| !deleted.contains(i))
        .map(|(_, &x)| x)
        .collect();
    if m > kept.len() {
        return Ok(0.0);
    }
    sigma_brute(&kept, m)
}

fn det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().partial_cmp(&a[j * n + c].abs()).unwrap())
            .unwrap();
        if a[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for j in 0..n {
                a.swap(p * n + j, c * n + j);
            }
            d = -d;
        }
        let piv = a[c * n + c];
        d *= piv;
        for i in (c + 1)..n {
            let f = a[i * n + c] / piv;
            for j in c..n {
                a[i * n + j] -= f * a[c * n + j];
            }
        }
    }
    d
}

/// `sigma_m(lambda(A))` as the sum of all `m x m` principal minors of `A`.
pub fn sigma_matrix_brute(a: &SymMatrix, m: usize) -> Result<f64, OracleError> {
    let n = a.dim();
    if m > n {
        return Err(OracleError::OrderOutOfRange { m, n });
    }
    Ok(sigma_matrix_all_brute(a, m)?[m])
}

/// `[sigma_0, ..., sigma_mmax]` of `lambda(A)` in one pass over the principal
/// minors.
pub fn sigma_matrix_all_brute(a: &SymMatrix, mmax: usize) -> Result<Vec<f64>, OracleError> {
    let n = a.dim();
    if n > BRUTE_MAX_N {
        return Err(OracleError::TooLarge { n, max: BRUTE_MAX_N });
    }
    if mmax > n {
        return Err(OracleError::OrderOutOfRange { m: mmax, n });
    }
    let mut out = vec![0.0; mmax + 1];
    out[0] = 1.0;
    for mask in 1u32..(1u32 << n) {
        let m = mask.count_ones() as usize;
        if m > mmax {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sub: Vec<f64> = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| a.get(i, j))
            .collect();
        out[m] += det(sub, m);
    }
    Ok(out)
}

fn admissible_brute(a: &SymMatrix, k: usize) -> Result<bool, OracleError> {
    Ok(sigma_matrix_all_brute(a, k)?[1..].iter().all(|&s| s > 0.0))
}

/// `log(sigma_k/sigma_l)` of a matrix through principal minors.
pub fn log_quotient_brute(a: &SymMatrix, q: QuotientIndices) -> Result<f64, OracleError> {
    let s = sigma_matrix_all_brute(a, q.k())?;
    if !s[1..].iter().all(|&v| v > 0.0) {
        return Err(OracleError::NotAdmissible { k: q.k() });
    }
    Ok((s[q.k()] / s[q.l()]).ln())
}

pub const FD_H_MIN: f64 = 1e-12;
/// Smallest step the refinement loop of [`fij_fd`] uses.
pub const FD_H_FLOOR: f64 = 1e-7;
pub const FD_AGREE: f64 = 1e-9;

/// Entrywise central difference of the log quotient, Richardson-extrapolated
/// from steps `h` and `h/2` and refined by shrinking `h` until successive
/// estimates agree. Off-diagonal entries are perturbed symmetrically by half
/// the step in both `a_ij` and `a_ji`.
pub fn fij_fd(a: &SymMatrix, q: QuotientIndices, h: f64) -> Result<SymMatrix, OracleError> {
    if !admissible_brute(a, q.k())? {
        return Err(OracleError::NotAdmissible { k: q.k() });
    }
    let n = a.dim();
    let mut out = SymMatrix::identity(n);
    for i in 0..n {
        for j in i..n {
            let central = |step: f64| -> Result<f64, OracleError> {
                let delta = if i == j { step } else { 0.5 * step };
                let mut plus = a.clone();
                plus.set(i, j, a.get(i, j) + delta);
                let mut minus = a.clone();
                minus.set(i, j, a.get(i, j) - delta);
                Ok((log_quotient_brute(&plus, q)? - log_quotient_brute(&minus, q)?) / (2.0 * step))
            };
            let extrapolated = |step: f64| -> Result<f64, OracleError> {
                Ok((4.0 * central(0.5 * step)? - central(step)?) / 3.0)
            };
            let mut step = h;
            let mut prev = loop {
                if step < FD_H_MIN {
                    return Err(OracleError::StepTooSmall { h_min: FD_H_MIN });
                }
                match extrapolated(step) {
                    Ok(v) => break v,
                    Err(OracleError::NotAdmissible { .. }) => step *= 0.5,
                    Err(e) => return Err(e),
                }
            };
            // shrink until two estimates agree; near the cone boundary the
            // truncation error of a fixed step dominates
            let value = loop {
                if step * 0.25 < FD_H_FLOOR {
                    break prev;
                }
                step *= 0.25;
                let next = extrapolated(step)?;
                if (next - prev).abs() <= FD_AGREE * (1.0 + next.abs()) {
                    break next;
                }
                prev = next;
            };
            out.set(i, j, value);
        }
    }
    Ok(out)
}

/// Seed plus the sampling box for eigenvalue entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RngSpec {
    pub seed: u64,
    pub lo: f64,
    pub hi: f64,
    /// Rejection cap of the samplers that take a spec.
    pub max_tries: usize,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            lo: -1.0,
            hi: 3.0,
            max_tries: MAX_REJECTIONS,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Independent stream for shard `i`.
    pub fn shard(&self, i: u64) -> Self {
        Self {
            seed: self
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(i.wrapping_mul(0xD1B5_4A32_D192_ED03)),
            ..*self
        }
    }
}

/// Extra filters applied on top of cone membership.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    None,
    /// At least one negative entry. Sorted ascending so index 0 holds the
    /// most negative one.
    NegativeEntry,
    /// `lam_1 > 0`, `lam_n < 0` with `lam_2 >= ... >= lam_n`, `lam_1 >= delta
    /// lam_2` and `-lam_n >= eps lam_1`.
    Pinch { delta: f64, eps: f64 },
}

fn gamma_k_brute(lam: &[f64], k: usize) -> bool {
    (1..=k).all(|i| sigma_brute(lam, i).map(|s| s > 0.0).unwrap_or(false))
}

/// Rejection sampler on `Gamma_k`: entries uniform in `[lo, hi)`, except
/// that `Pinch` draws the first entry from `(0, hi)` and the last one
/// uniformly from its admissible interval.
pub fn sample_gamma_k<R: Rng>(
    n: usize,
    k: usize,
    spec: &RngSpec,
    constraint: Constraint,
    rng: &mut R,
) -> Result<Vec<f64>, OracleError> {
    if n < 2 || k == 0 || k > n {
        return Err(OracleError::BadRequest(format!("n={n}, k={k}")));
    }
    for _ in 0..spec.max_tries {
        let mut lam: Vec<f64> = (0..n).map(|_| rng.gen_range(spec.lo..spec.hi)).collect();
        let ok = match constraint {
            Constraint::None => {
                lam.sort_by(|a, b| b.partial_cmp(a).unwrap());
                true
            }
            Constraint::NegativeEntry => {
                lam.sort_by(|a, b| a.partial_cmp(b).unwrap());
                lam[0] < 0.0
            }
            Constraint::Pinch { delta, eps } => {
                lam[0] = rng.gen_range(0.0..spec.hi);
                lam[1..n - 1].sort_by(|a, b| b.partial_cmp(a).unwrap());
                match pinch_last_entry(&lam[..n - 1], k, eps, rng) {
                    Some(mu) if lam[0] >= delta * lam[1] => {
                        lam[n - 1] = mu;
                        true
                    }
                    _ => false,
                }
            }
        };
        if ok && gamma_k_brute(&lam, k) {
            return Ok(lam);
        }
    }
    Err(OracleError::Exhausted(spec.max_tries))
}

/// Draws a last entry `mu < 0` with `(head, mu)` in `Gamma_k`,
/// `mu <= min(head)` and `-mu >= eps head[0]`. Each `sigma_m(head, mu) =
/// sigma_m(head) + mu sigma_{m-1}(head)` is linear in `mu`, so the admissible
/// set is an interval.
fn pinch_last_entry<R: Rng>(head: &[f64], k: usize, eps: f64, rng: &mut R) -> Option<f64> {
    let s: Vec<f64> = (0..=k).map(|m| sigma_brute(head, m).unwrap_or(0.0)).collect();
    let mut lower = f64::NEG_INFINITY;
    for m in 1..=k {
        if s[m - 1] <= 0.0 {
            return None;
        }
        lower = lower.max(-s[m] / s[m - 1]);
    }
    let upper = (-eps * head[0]).min(head.iter().copied().fold(f64::INFINITY, f64::min));
    if !(lower < upper && upper < 0.0) {
        return None;
    }
    let mu = rng.gen_range(lower..upper);
    (mu > lower).then_some(mu)
}

/// Random symmetric matrix with `a_11 < 0` and a diagonal lower-right block,
/// whose eigenvalues lie in `Gamma_k`.
pub fn sample_arrow_matrix<R: Rng>(
    n: usize,
    k: usize,
    spec: &RngSpec,
    rng: &mut R,
) -> Result<SymMatrix, OracleError> {
    if n < 2 || k == 0 || k >= n {
        return Err(OracleError::BadRequest(format!("n={n}, k={k}")));
    }
    for _ in 0..spec.max_tries {
        // log-uniform |a_11| with couplings of matching size keeps large k
        // reachable
        let size = 10f64.powf(-3.0 * rng.gen::<f64>());
        let a11 = spec.lo.abs() * size * rng.gen_range(-1.0..0.0);
        let diag: Vec<f64> = (1..n).map(|_| rng.gen_range(spec.lo..spec.hi)).collect();
        let row: Vec<f64> = (1..n)
            .map(|_| size.sqrt() * rng.gen_range(-1.0..1.0))
            .collect();
        let a = SymMatrix::from_fn(n, |i, j| match (i, j) {
            (0, 0) => a11,
            (0, j) => row[j - 1],
            (i, j) if i == j => diag[i - 1],
            _ => 0.0,
        });
        if admissible_brute(&a, k)? {
            return Ok(a);
        }
    }
    Err(OracleError::Exhausted(spec.max_tries))
}

/// Random symmetric matrix with entries uniform in `[-1, 1]` plus `shift * I`.
pub fn sample_symmetric<R: Rng>(n: usize, shift: f64, rng: &mut R) -> SymMatrix {
    let vals: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SymMatrix::from_fn(n, |i, j| vals[i * n + j] + if i == j { shift } else { 0.0 })
}

/// Random symmetric matrix whose eigenvalues lie in `Gamma_k`.
pub fn sample_admissible_matrix<R: Rng>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<SymMatrix, OracleError> {
    for _ in 0..MAX_REJECTIONS {
        let shift = rng.gen_range(0.0..2.0);
        let a = sample_symmetric(n, shift, rng);
        if admissible_brute(&a, k)? {
            return Ok(a);
        }
    }
    Err(OracleError::Exhausted(MAX_REJECTIONS))
}
