//! Sparse LU solves with a fixed sparsity pattern.

use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::prelude::Solve;
use faer::Mat;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid sparsity pattern: {0}")]
    Pattern(String),
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("sparse LU failed: {0}")]
    Factor(String),
    #[error("linear solve produced non-finite values")]
    NonFinite,
}

/// Square sparse system whose pattern is analysed once and then refactored
/// numerically for each new set of values.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    n: usize,
    nnz: usize,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

impl SparseSystem {
    /// `entries` lists `(row, col)` positions; duplicates are summed.
    pub fn new(n: usize, entries: &[(usize, usize)]) -> Result<Self, SolveError> {
        let pairs: Vec<Pair<usize, usize>> =
            entries.iter().map(|&(row, col)| Pair { row, col }).collect();
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
            .map_err(|e| SolveError::Pattern(format!("{e:?}")))?;
        let lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| SolveError::Factor(format!("{e:?}")))?;
        Ok(Self {
            n,
            nnz: entries.len(),
            symbolic,
            argsort,
            lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = rhs` where `values[i]` belongs to `entries[i]`.
    pub fn solve(&self, values: &[f64], rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        if values.len() != self.nnz {
            return Err(SolveError::Length {
                expected: self.nnz,
                got: values.len(),
            });
        }
        if rhs.len() != self.n {
            return Err(SolveError::Length {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let mat = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, values)
            .map_err(|e| SolveError::Factor(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(self.lu.clone(), mat.as_ref())
            .map_err(|e| SolveError::Factor(format!("{e:?}")))?;
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = lu.solve(&b);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(SolveError::NonFinite)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal() {
        let n = 50;
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            entries.push((i, i));
            values.push(4.0);
            if i > 0 {
                entries.push((i, i - 1));
                values.push(-1.0);
            }
            if i + 1 < n {
                entries.push((i, i + 1));
                values.push(-2.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut rhs = vec![0.0; n];
        for (&(r, c), v) in entries.iter().zip(&values) {
            rhs[r] += v * x_true[c];
        }
        let sys = SparseSystem::new(n, &entries).unwrap();
        for _ in 0..2 {
            let x = sys.solve(&values, &rhs).unwrap();
            for (a, b) in x.iter().zip(&x_true) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let sys = SparseSystem::new(2, &[(0, 0), (0, 0), (1, 1), (0, 1)]).unwrap();
        let x = sys.solve(&[1.0, 1.0, 4.0, 0.0], &[2.0, 8.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }
}
