//! Seeded property suite for the symmetric functions and the log quotient
//! operator, checked against the brute-force oracles.
//!
//! Every trial draws from its own stream, so results do not depend on the
//! execution mode. A shadow `sigma` with a planted sign error can be swapped
//! in to confirm that the suite actually detects a broken implementation.

use rand::Rng;
use serde::Serialize;

use crate::exec::Exec;
use crate::oracle::{
    fij_fd, log_quotient_brute, sample_admissible_matrix, sample_arrow_matrix, sample_gamma_k,
    Constraint, RngSpec,
};
use crate::symmfunc::{binomial, eigen_sym, log_quotient_matrix, QuotientIndices, SymMatrix};

/// Which `sigma` the identity and inequality properties use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaImpl {
    Reference,
    /// Flips the sign of the update that builds `sigma_2`.
    Shadow,
}

impl SigmaImpl {
    /// `[sigma_0 .. sigma_mmax]`.
    pub fn sigmas(self, lam: &[f64], mmax: usize) -> Vec<f64> {
        match self {
            SigmaImpl::Reference => crate::symmfunc::sigmas(lam, mmax),
            SigmaImpl::Shadow => {
                let mut e = vec![0.0; mmax + 1];
                e[0] = 1.0;
                for (seen, &x) in lam.iter().enumerate() {
                    for m in (1..=(seen + 1).min(mmax)).rev() {
                        if m == 2 {
                            e[m] -= x * e[m - 1];
                        } else {
                            e[m] += x * e[m - 1];
                        }
                    }
                }
                e
            }
        }
    }

    pub fn sigma(self, lam: &[f64], m: usize) -> f64 {
        self.sigmas(lam, m)[m]
    }

    pub fn sigma_omit(self, lam: &[f64], m: usize, i: usize) -> f64 {
        let rest: Vec<f64> = lam
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .collect();
        self.sigma(&rest, m)
    }

    /// `d(sigma_k/sigma_l)/d lambda_i` for every `i`.
    pub fn d_quotient(self, lam: &[f64], k: usize, l: usize) -> Vec<f64> {
        let sk = self.sigma(lam, k);
        let sl = self.sigma(lam, l);
        (0..lam.len())
            .map(|i| {
                let dk = self.sigma_omit(lam, k - 1, i);
                let dl = if l == 0 { 0.0 } else { self.sigma_omit(lam, l - 1, i) };
                (dk * sl - sk * dl) / (sl * sl)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    SigmaRecursion,
    SigmaEuler,
    SigmaDeletedSum,
    DeletedChain,
    ProductBound,
    LargestEntryBound,
    NewtonMaclaurin,
    NegativeEntryDeletion,
    NegativeEntryDerivative,
    ArrowDerivative,
    ArrowTraceBound,
    PinchDeletion,
    PinchDerivative,
    Concavity,
    Parabolicity,
    DerivativeFd,
}

pub const ALL_PROPERTIES: [Property; 16] = [
    Property::SigmaRecursion,
    Property::SigmaEuler,
    Property::SigmaDeletedSum,
    Property::DeletedChain,
    Property::ProductBound,
    Property::LargestEntryBound,
    Property::NewtonMaclaurin,
    Property::NegativeEntryDeletion,
    Property::NegativeEntryDerivative,
    Property::ArrowDerivative,
    Property::ArrowTraceBound,
    Property::PinchDeletion,
    Property::PinchDerivative,
    Property::Concavity,
    Property::Parabolicity,
    Property::DerivativeFd,
];

pub const IDENTITY_TOL: f64 = 1e-12;
pub const INEQUALITY_SLACK: f64 = 1e-10;
pub const FD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-4;
const MIDPOINT_ATTEMPTS: usize = 100;
const PINCH_TRIES: usize = 2_000;
const PINCH_REDRAWS: usize = 200;

impl Property {
    pub fn name(self) -> &'static str {
        match self {
            Property::SigmaRecursion => "sigma_recursion",
            Property::SigmaEuler => "sigma_euler",
            Property::SigmaDeletedSum => "sigma_deleted_sum",
            Property::DeletedChain => "deleted_chain",
            Property::ProductBound => "product_bound",
            Property::LargestEntryBound => "largest_entry_bound",
            Property::NewtonMaclaurin => "newton_maclaurin",
            Property::NegativeEntryDeletion => "negative_entry_deletion",
            Property::NegativeEntryDerivative => "negative_entry_derivative",
            Property::ArrowDerivative => "arrow_derivative",
            Property::ArrowTraceBound => "arrow_trace_bound",
            Property::PinchDeletion => "pinch_deletion",
            Property::PinchDerivative => "pinch_derivative",
            Property::Concavity => "log_quotient_concavity",
            Property::Parabolicity => "parabolicity",
            Property::DerivativeFd => "derivative_fd",
        }
    }

    /// Smallest acceptable margin.
    pub fn limit(self) -> f64 {
        match self {
            Property::SigmaRecursion | Property::SigmaEuler | Property::SigmaDeletedSum => {
                -IDENTITY_TOL
            }
            Property::DerivativeFd => -FD_TOL,
            Property::Parabolicity => f64::MIN_POSITIVE,
            _ => -INEQUALITY_SLACK,
        }
    }

    fn index(self) -> u64 {
        ALL_PROPERTIES.iter().position(|&p| p == self).unwrap() as u64
    }

    /// Dimension range `lo..=hi` used by the trials.
    fn dims(self) -> (usize, usize) {
        match self {
            Property::PinchDeletion | Property::PinchDerivative => (3, 8),
            Property::DerivativeFd => (2, 4),
            _ => (2, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    /// Trials for which no admissible sample was found.
    pub skipped: usize,
    pub worst_margin: Option<f64>,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub sigma: SigmaImpl,
    pub properties: Vec<PropertyReport>,
    pub all_pass: bool,
    pub warnings: Vec<String>,
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.abs().max(1.0)
}

/// `sigma_k(|lam|)`: bounds every term of an expansion of `sigma_k(lam)`.
fn abs_scale(lam: &[f64], k: usize) -> f64 {
    let abs: Vec<f64> = lam.iter().map(|v| v.abs()).collect();
    crate::symmfunc::sigmas(&abs, k)[k].max(f64::MIN_POSITIVE)
}

fn lemma_constant(n: usize, k: usize, l: usize) -> f64 {
    let (n, k, l) = (n as f64, k as f64, l as f64);
    n / k * (k - l) / (n - l) / (n - k + 1.0)
}

/// Margin of one trial, or `None` when no sample was available.
pub fn trial(prop: Property, seed: u64, t: usize, sig: SigmaImpl) -> Option<f64> {
    let spec = RngSpec::new(seed).shard((prop.index() << 32) | t as u64);
    let mut rng = spec.rng();
    let (lo, hi) = prop.dims();
    let n = lo + t % (hi - lo + 1);
    match prop {
        Property::SigmaRecursion | Property::SigmaEuler | Property::SigmaDeletedSum => {
            let lam: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let k = rng.gen_range(1..=n);
            let scale = abs_scale(&lam, k);
            let sk = sig.sigma(&lam, k);
            let err = match prop {
                Property::SigmaRecursion => (0..n)
                    .map(|i| {
                        (sk - sig.sigma_omit(&lam, k, i) - lam[i] * sig.sigma_omit(&lam, k - 1, i))
                            .abs()
                    })
                    .fold(0.0, f64::max),
                Property::SigmaEuler => {
                    let sum: f64 = (0..n)
                        .map(|i| lam[i] * sig.sigma_omit(&lam, k - 1, i))
                        .sum();
                    (sum - k as f64 * sk).abs() / k as f64
                }
                _ => {
                    let sum: f64 = (0..n).map(|i| sig.sigma_omit(&lam, k, i)).sum();
                    (sum - (n - k) as f64 * sk).abs() / n as f64
                }
            };
            Some(-err / scale)
        }
        Property::DeletedChain | Property::ProductBound | Property::LargestEntryBound => {
            let k = rng.gen_range(1..=n);
            let lam = sample_gamma_k(n, k, &spec, Constraint::None, &mut rng).ok()?;
            Some(match prop {
                Property::DeletedChain => {
                    let c: Vec<f64> = (0..n).map(|i| sig.sigma_omit(&lam, k - 1, i)).collect();
                    let scale = c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    let steps = c.windows(2).map(|w| w[1] - w[0]).fold(c[0], f64::min);
                    steps / scale
                }
                Property::ProductBound => {
                    let prod: f64 = lam[..k].iter().product::<f64>() * binomial(n, k);
                    let positive = lam[k - 1] / lam[0].max(1.0);
                    positive.min(rel(prod - sig.sigma(&lam, k), prod))
                }
                _ => {
                    let lhs = lam[0] * sig.sigma_omit(&lam, k - 1, 0);
                    let rhs = k as f64 / n as f64 * sig.sigma(&lam, k);
                    rel(lhs - rhs, lhs)
                }
            })
        }
        Property::NewtonMaclaurin => {
            let k = rng.gen_range(1..=n);
            let l = rng.gen_range(0..k);
            let r = rng.gen_range(1..=k);
            let s = rng.gen_range(0..=l.min(r - 1));
            let lam = sample_gamma_k(n, k, &spec, Constraint::None, &mut rng).ok()?;
            let side = |a: usize, b: usize| {
                let num = sig.sigma(&lam, a) / binomial(n, a);
                let den = sig.sigma(&lam, b) / binomial(n, b);
                (num / den).powf(1.0 / (a - b) as f64)
            };
            let (lhs, rhs) = (side(k, l), side(r, s));
            Some(rel(rhs - lhs, rhs))
        }
        Property::NegativeEntryDeletion | Property::NegativeEntryDerivative => {
            let k = rng.gen_range(1..n);
            let lam = sample_gamma_k(n, k, &spec, Constraint::NegativeEntry, &mut rng).ok()?;
            if prop == Property::NegativeEntryDeletion {
                Some(
                    (0..=k)
                        .map(|m| {
                            let a = sig.sigma_omit(&lam, m, 0);
                            rel(a - sig.sigma(&lam, m), a)
                        })
                        .fold(f64::INFINITY, f64::min),
                )
            } else {
                let l = rng.gen_range(0..k);
                let d = sig.d_quotient(&lam, k, l);
                let total: f64 = d.iter().sum();
                let scale: f64 = d.iter().map(|v| v.abs()).sum();
                Some((d[0] - lemma_constant(n, k, l) * total) / scale.max(f64::MIN_POSITIVE))
            }
        }
        Property::ArrowDerivative | Property::ArrowTraceBound => {
            let k = rng.gen_range(1..n);
            let l = rng.gen_range(0..k);
            let a = sample_arrow_matrix(n, k, &spec, &mut rng).ok()?;
            let q = QuotientIndices::new(k, l, n).ok()?;
            let (log_value, f) = log_quotient_matrix(&a, q).ok()?;
            let value = log_value.exp();
            let d: Vec<f64> = (0..n).map(|i| value * f.get(i, i)).collect();
            let total: f64 = d.iter().sum();
            if prop == Property::ArrowDerivative {
                let scale: f64 = d.iter().map(|v| v.abs()).sum();
                Some((d[0] - lemma_constant(n, k, l) * total) / scale.max(f64::MIN_POSITIVE))
            } else {
                let bound = (k - l) as f64 / k as f64 / binomial(n, l)
                    * (-a.get(0, 0)).powi((k - l - 1) as i32);
                Some(rel(total - bound, total.max(bound)))
            }
        }
        Property::PinchDeletion | Property::PinchDerivative => {
            let k = rng.gen_range(2..n);
            let spec = RngSpec {
                max_tries: PINCH_TRIES,
                ..spec
            };
            // small (delta, eps) are needed when k is close to n; redraw
            // the pair when its admissible set is too thin to hit
            let (delta, eps, lam) = (0..PINCH_REDRAWS).find_map(|_| {
                let delta = 10f64.powf(rng.gen_range(-3.0..-0.3));
                let eps = 10f64.powf(rng.gen_range(-3.0..-0.3));
                sample_gamma_k(n, k, &spec, Constraint::Pinch { delta, eps }, &mut rng)
                    .ok()
                    .map(|lam| (delta, eps, lam))
            })?;
            let nf = n as f64;
            let c0 = (eps * eps * delta * delta / (2.0 * (nf - 2.0) * (nf - 1.0)))
                .min(eps * eps * delta / (4.0 * (nf - 1.0)));
            if prop == Property::PinchDeletion {
                Some(
                    (0..k)
                        .map(|m| {
                            let a = sig.sigma_omit(&lam, m, 0);
                            rel(a - c0 * sig.sigma(&lam, m), a)
                        })
                        .fold(f64::INFINITY, f64::min),
                )
            } else {
                let l = rng.gen_range(0..k);
                let c1 = lemma_constant(n, k, l) * c0 * c0;
                let d = sig.d_quotient(&lam, k, l);
                let total: f64 = d.iter().sum();
                let scale: f64 = d.iter().map(|v| v.abs()).sum();
                Some((d[0] - c1 * total) / scale.max(f64::MIN_POSITIVE))
            }
        }
        Property::Concavity => {
            let k = rng.gen_range(1..=n);
            let l = rng.gen_range(0..k);
            let q = QuotientIndices::new(k, l, n).ok()?;
            for _ in 0..MIDPOINT_ATTEMPTS {
                let a = sample_admissible_matrix(n, k, &mut rng).ok()?;
                let b = sample_admissible_matrix(n, k, &mut rng).ok()?;
                let mid = a.add(&b).scale(0.5);
                let Ok(vm) = log_quotient_brute(&mid, q) else {
                    continue;
                };
                let va = log_quotient_brute(&a, q).ok()?;
                let vb = log_quotient_brute(&b, q).ok()?;
                return Some(vm - 0.5 * (va + vb));
            }
            None
        }
        Property::Parabolicity => {
            let k = rng.gen_range(1..=n);
            let l = rng.gen_range(0..k);
            let q = QuotientIndices::new(k, l, n).ok()?;
            let a = sample_admissible_matrix(n, k, &mut rng).ok()?;
            let (_, f) = log_quotient_matrix(&a, q).ok()?;
            let eig = eigen_sym(&f).ok()?;
            let vals = eig.values.values();
            let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let low = vals.iter().copied().fold(f64::INFINITY, f64::min);
            Some(low / top.max(f64::MIN_POSITIVE))
        }
        Property::DerivativeFd => {
            let k = rng.gen_range(1..=n);
            let l = rng.gen_range(0..k);
            let q = QuotientIndices::new(k, l, n).ok()?;
            let a = sample_admissible_matrix(n, k, &mut rng).ok()?;
            let (_, f) = log_quotient_matrix(&a, q).ok()?;
            let fd = fij_fd(&a, q, FD_STEP).ok()?;
            Some(-max_entry_diff(&f, &fd))
        }
    }
}

fn max_entry_diff(a: &SymMatrix, b: &SymMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn run_property(
    prop: Property,
    seed: u64,
    trials: usize,
    sig: SigmaImpl,
    exec: Exec,
) -> PropertyReport {
    let margins = exec.map(trials, |t| trial(prop, seed, t, sig));
    let limit = prop.limit();
    let mut passed = 0;
    let mut skipped = 0;
    let mut worst: Option<f64> = None;
    for m in margins {
        match m {
            None => skipped += 1,
            Some(m) => {
                // NaN counts as a failure and as the worst margin
                if m >= limit {
                    passed += 1;
                }
                worst = Some(match worst {
                    Some(w) if !(m < w) && !m.is_nan() => w,
                    _ => m,
                });
            }
        }
    }
    PropertyReport {
        name: prop.name(),
        trials,
        passed,
        skipped,
        worst_margin: worst,
        limit,
        pass: passed + skipped == trials && skipped * 10 <= trials,
    }
}

pub fn run_suite(seed: u64, trials: usize, sig: SigmaImpl, exec: Exec) -> VerifyReport {
    let mut warnings = Vec::new();
    if trials == 0 {
        warnings.push("trials = 0: every property passes vacuously".to_string());
    }
    let properties: Vec<PropertyReport> = ALL_PROPERTIES
        .iter()
        .map(|&p| run_property(p, seed, trials, sig, exec))
        .collect();
    for p in &properties {
        if p.skipped > 0 {
            warnings.push(format!("{}: {} trials without a sample", p.name, p.skipped));
        }
    }
    VerifyReport {
        seed,
        trials,
        sigma: sig,
        all_pass: properties.iter().all(|p| p.pass),
        properties,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shadow_differs_only_from_degree_two() {
        let lam = [1.0, 2.0, -0.5, 3.0];
        let good = SigmaImpl::Reference.sigmas(&lam, 4);
        let bad = SigmaImpl::Shadow.sigmas(&lam, 4);
        assert_eq!(good[0], bad[0]);
        assert_eq!(good[1], bad[1]);
        assert_ne!(good[2], bad[2]);
    }

    #[test]
    fn small_suite_passes() {
        let r = run_suite(7, 200, SigmaImpl::Reference, Exec::default());
        for p in &r.properties {
            assert!(p.pass, "{p:?}");
        }
        assert!(r.all_pass);
    }

    #[test]
    fn shadow_is_caught() {
        let r = run_property(
            Property::SigmaRecursion,
            7,
            200,
            SigmaImpl::Shadow,
            Exec::default(),
        );
        assert!(!r.pass);
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let r = run_suite(1, 0, SigmaImpl::Reference, Exec::Sequential);
        assert!(r.all_pass);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn independent_of_exec() {
        let a = run_property(Property::Concavity, 3, 50, SigmaImpl::Reference, Exec::Sequential);
        let b = run_property(Property::Concavity, 3, 50, SigmaImpl::Reference, Exec::default());
        assert_eq!(a, b);
    }
}
