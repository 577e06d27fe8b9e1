//! Dense symmetric factorization with envelope skipping.
//!
//! The stiffness and covariance matrices produced by node-major DOF numbering are banded, so
//! the factorization only visits entries right of each row's first nonzero. Fill-in stays
//! inside that envelope.

use nalgebra::DMatrix;
use thiserror::Error;

/// Pivots below this fraction of the original diagonal are treated as a loss of definiteness.
const RELATIVE_PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("matrix is not positive definite: pivot {pivot:e} at row {row} (min accepted pivot so far {min_pivot:e})")]
    NotPositiveDefinite { row: usize, pivot: f64, min_pivot: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    first: Vec<usize>,
    // row-major, only [first[i], i] of row i is meaningful
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors the lower triangle of a symmetric matrix.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self, FactorError> {
        if a.nrows() != a.ncols() {
            return Err(FactorError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        let mut first = vec![0usize; n];
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let mut fi = i;
            for j in 0..=i {
                let v = a[(i, j)];
                if !v.is_finite() {
                    return Err(FactorError::NonFinite);
                }
                if v != 0.0 && j < fi {
                    fi = j;
                }
                l[i * n + j] = v;
            }
            first[i] = fi;
        }

        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let start = fi.max(first[j]);
                let (row_i, row_j) = (i * n, j * n);
                let mut s = l[row_i + j];
                for k in start..j {
                    s -= l[row_i + k] * l[row_j + k];
                }
                if j < i {
                    l[row_i + j] = s / l[row_j + j];
                } else {
                    let scale = a[(i, i)].abs().max(f64::MIN_POSITIVE);
                    if !(s > RELATIVE_PIVOT_TOL * scale) {
                        return Err(FactorError::NotPositiveDefinite {
                            row: i,
                            pivot: s,
                            min_pivot,
                        });
                    }
                    min_pivot = min_pivot.min(s);
                    l[row_i + i] = s.sqrt();
                }
            }
        }
        Ok(Self { n, first, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        for i in 0..n {
            let row = i * n;
            let mut s = b[i];
            for k in self.first[i]..i {
                s -= self.l[row + k] * b[k];
            }
            b[i] = s / self.l[row + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) {
        assert_eq!(y.len(), self.n);
        let n = self.n;
        for i in (0..n).rev() {
            let row = i * n;
            let xi = y[i] / self.l[row + i];
            y[i] = xi;
            for k in self.first[i]..i {
                y[k] -= self.l[row + k] * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `log |A|`
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.l[i * self.n + i].ln()).sum()
    }

    /// Smallest diagonal entry of `L`, squared.
    pub fn min_pivot(&self) -> f64 {
        (0..self.n)
            .map(|i| self.l[i * self.n + i].powi(2))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖a − b‖₂`
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
