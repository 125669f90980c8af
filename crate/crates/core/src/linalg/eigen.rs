//! Symmetric eigendecomposition by cyclic Jacobi rotations and the matrix
//! inverse roots built on it.

use super::Matrix;
use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest one are treated as
/// zero by [`inverse_root`] when no damping is applied.
pub const PSEUDO_INVERSE_TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

/// `A = Q diag(values) Qᵀ` with eigenvalues in non-increasing order.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues, largest first.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `Q diag(f(values)) Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let scaled = Matrix::from_fn(n, n, |i, j| self.vectors[(i, j)] * f(self.values[j]));
        scaled.matmul_t(&self.vectors)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Only the upper triangle is trusted; the input is symmetrised first.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch {
            expected: "square matrix".into(),
            found: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigen input".into()));
    }
    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut q = Matrix::identity(n);
    let scale = m.frobenius();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || scale == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apq = m[(p, r)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(r, r)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkr) = (m[(k, p)], m[(k, r)]);
                    m[(k, p)] = c * mkp - s * mkr;
                    m[(k, r)] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let (mpk, mrk) = (m[(p, k)], m[(r, k)]);
                    m[(p, k)] = c * mpk - s * mrk;
                    m[(r, k)] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            kernel: "jacobi eigen",
            residual: m.max_abs_off_diagonal(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[(y, y)].total_cmp(&m[(x, x)]).then(x.cmp(&y)));
    Ok(SymmetricEigen {
        values: order.iter().map(|&j| m[(j, j)]).collect(),
        vectors: q.select_columns(&order),
    })
}

/// `(A + εI)^{-1/p}` for a symmetric positive semidefinite `A`.
///
/// With `epsilon == 0` the pseudo-inverse root is returned: eigenvalues at
/// or below [`PSEUDO_INVERSE_TOLERANCE`] times the largest map to zero.
pub fn inverse_root(a: &Matrix, p: f64, epsilon: f64) -> Result<Matrix> {
    let e = symmetric_eigen(a)?;
    let largest = e.values.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = PSEUDO_INVERSE_TOLERANCE * largest;
    Ok(e.map(|lambda| {
        let shifted = lambda.max(0.0) + epsilon;
        if epsilon == 0.0 && (lambda <= cutoff || largest == 0.0) {
            0.0
        } else {
            shifted.powf(-1.0 / p)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_eigenvalues() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        assert!(e.map(|x| x).max_abs_diff(&a) < 1e-14);
    }

    #[test]
    fn inverse_fourth_root_of_diagonal() {
        let a = Matrix::diag_rect(2, 2, &[16.0, 0.0]);
        let r = inverse_root(&a, 4.0, 0.0).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-14);
        assert_eq!(r[(1, 1)], 0.0);
    }
}
