//! Matrix norms, the entrywise sign map and seeded orthonormal frames.

use super::{dot, singular_values, Matrix};
use crate::error::{Error, Result};
use crate::rng::GaussianStream;
use serde::{Deserialize, Serialize};

/// Matrix norms used by the steepest-descent rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Square root of the sum of squared entries.
    Frobenius,
    /// Largest absolute entry.
    MaxAbs,
    /// Largest singular value.
    Spectral,
    /// Sum of singular values.
    Nuclear,
}

/// The requested norm of `a`. Spectral and nuclear norms of a zero matrix are 0.
pub fn norm(a: &Matrix, kind: NormKind) -> Result<f64> {
    match kind {
        NormKind::Frobenius => Ok(a.frobenius()),
        NormKind::MaxAbs => Ok(a.max_abs()),
        NormKind::Spectral => Ok(singular_values(a)?.first().copied().unwrap_or(0.0)),
        NormKind::Nuclear => Ok(singular_values(a)?.iter().sum()),
    }
}

/// Entrywise sign with `sign(0) = 0`.
pub fn sign_matrix(a: &Matrix) -> Matrix {
    a.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// An `n × m` matrix with orthonormal columns drawn from a seeded Gaussian.
///
/// Columns are produced by Gram–Schmidt with one reorthogonalisation pass,
/// so the result is uniformly distributed on the Stiefel manifold.
pub fn random_orthonormal(n: usize, m: usize, seed: u64) -> Result<Matrix> {
    if n == 0 || m == 0 || m > n {
        return Err(Error::Dimension(format!(
            "orthonormal frame needs 0 < m <= n, got n={n}, m={m}"
        )));
    }
    let mut g = GaussianStream::new(seed, "orthonormal-frame");
    let mut basis = Vec::with_capacity(m);
    extend_orthonormal(&mut basis, n, m, &mut g);
    Matrix::from_columns(&basis)
}

/// Appends seeded Gaussian directions to an orthonormal set until it holds
/// `target` vectors of length `n`.
pub(crate) fn extend_orthonormal(
    basis: &mut Vec<Vec<f64>>,
    n: usize,
    target: usize,
    g: &mut GaussianStream,
) {
    while basis.len() < target {
        let v: Vec<f64> = (0..n).map(|_| g.next()).collect();
        push_orthonormal(basis, v);
    }
}

/// Orthogonalises `v` against `basis` twice and appends it when it is not
/// numerically dependent. Returns whether the vector was kept.
pub(crate) fn push_orthonormal(basis: &mut Vec<Vec<f64>>, mut v: Vec<f64>) -> bool {
    let start = super::vec_norm(&v);
    orthogonalize(&mut v, basis);
    orthogonalize(&mut v, basis);
    let nv = super::vec_norm(&v);
    if start > 0.0 && nv > 1e-8 * start {
        v.iter_mut().for_each(|x| *x /= nv);
        basis.push(v);
        true
    } else {
        false
    }
}

/// Removes from `v` its components along the orthonormal vectors in `basis`.
pub(crate) fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}
