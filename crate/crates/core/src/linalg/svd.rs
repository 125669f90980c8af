//! Thin singular value decomposition by one-sided Jacobi rotations.
//!
//! Tall inputs are first reduced to a square triangular factor with a
//! Householder QR so that the Jacobi sweeps act on `min(m, n)` columns of
//! length `min(m, n)`. Wide inputs are handled through their transpose.

use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Relative cutoff below which singular values are treated as zero.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Absolute floor below which a matrix is considered identically zero.
pub const ZERO_FLOOR: f64 = 1e-300;

const JACOBI_TOLERANCE: f64 = 1e-15;
const MAX_SWEEPS: usize = 60;
/// Columns shorter than this multiple of `‖A‖_F` are round-off noise and
/// are not rotated; their cosine with other columns carries no information.
const NEGLIGIBLE_COLUMN: f64 = 4.0 * f64::EPSILON;

/// Thin SVD `A = U diag(s) Vᵀ` restricted to the retained rank.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, `m × r`.
    pub u: Matrix,
    /// Singular values in non-increasing order, all strictly positive.
    pub s: Vec<f64>,
    /// Right singular vectors, `n × r`.
    pub v: Matrix,
}

impl Svd {
    /// Retained rank `r`.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U diag(s) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.rank(), |i, j| {
            self.u[(i, j)] * self.s[j]
        });
        us.matmul_t(&self.v)
    }

    /// `U Vᵀ`, the orthogonal polar factor on the retained subspace.
    pub fn polar(&self) -> Matrix {
        self.u.matmul_t(&self.v)
    }
}

/// SVD truncated at [`DEFAULT_RANK_TOLERANCE`].
pub fn svd(a: &Matrix) -> Result<Svd> {
    svd_truncated(a, DEFAULT_RANK_TOLERANCE)
}

/// SVD keeping singular values strictly above `rank_tolerance · s_max`.
///
/// Fails with [`Error::ZeroMatrix`] when `s_max` is at or below
/// [`ZERO_FLOOR`] and with [`Error::NonFinite`] on NaN or infinite input.
pub fn svd_truncated(a: &Matrix, rank_tolerance: f64) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (m, n) = a.shape();
    let full = if m >= n {
        tall_svd(a)?
    } else {
        let t = tall_svd(&a.transpose())?;
        RawSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    };
    let largest = full.s.first().copied().unwrap_or(0.0);
    if largest <= ZERO_FLOOR {
        return Err(Error::ZeroMatrix { largest });
    }
    let keep: Vec<usize> = (0..full.s.len())
        .filter(|&j| full.s[j] > rank_tolerance * largest)
        .collect();
    Ok(Svd {
        u: Matrix::from_columns(&keep.iter().map(|&j| full.u[j].clone()).collect::<Vec<_>>())?,
        s: keep.iter().map(|&j| full.s[j]).collect(),
        v: Matrix::from_columns(&keep.iter().map(|&j| full.v[j].clone()).collect::<Vec<_>>())?,
    })
}

/// All `min(m, n)` singular values in non-increasing order, zeros included.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let raw = if a.rows() >= a.cols() {
        tall_svd(a)?
    } else {
        tall_svd(&a.transpose())?
    };
    Ok(raw.s)
}

/// Column-major SVD pieces sorted by decreasing singular value.
struct RawSvd {
    u: Vec<Vec<f64>>,
    s: Vec<f64>,
    v: Vec<Vec<f64>>,
}

fn tall_svd(a: &Matrix) -> Result<RawSvd> {
    let (m, n) = a.shape();
    let columns: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    if m == n {
        return jacobi(columns);
    }
    let (q, r) = householder_qr(columns, m);
    let inner = jacobi(r)?;
    let u = inner
        .u
        .iter()
        .map(|ur| {
            let mut col = vec![0.0; m];
            for (qk, &w) in q.iter().zip(ur) {
                for (c, &x) in col.iter_mut().zip(qk) {
                    *c += w * x;
                }
            }
            col
        })
        .collect();
    Ok(RawSvd {
        u,
        s: inner.s,
        v: inner.v,
    })
}

/// Thin Householder QR of an `m × n` column set with `m > n`.
///
/// Returns the `n` orthonormal columns of `Q` and the columns of the
/// `n × n` upper triangular factor `R`.
fn householder_qr(mut a: Vec<Vec<f64>>, m: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let x = &a[j][j..];
        let norm_x = dot(x, x).sqrt();
        let mut v = x.to_vec();
        if norm_x > 0.0 {
            let alpha = if x[0] >= 0.0 { -norm_x } else { norm_x };
            v[0] -= alpha;
            let nv = dot(&v, &v).sqrt();
            if nv > 0.0 {
                v.iter_mut().for_each(|e| *e /= nv);
            }
        } else {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
        for col in a.iter_mut().skip(j) {
            apply_reflector(&v, &mut col[j..]);
        }
        reflectors.push(v);
    }
    let r = (0..n)
        .map(|j| (0..n).map(|i| if i <= j { a[j][i] } else { 0.0 }).collect())
        .collect();
    let q = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            for (k, v) in reflectors.iter().enumerate().rev() {
                apply_reflector(v, &mut e[k..]);
            }
            e
        })
        .collect();
    (q, r)
}

fn apply_reflector(v: &[f64], x: &mut [f64]) {
    let s = 2.0 * dot(v, x);
    if s != 0.0 {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi -= s * vi;
        }
    }
}

/// Hestenes one-sided Jacobi on the columns of a square or tall matrix.
fn jacobi(mut w: Vec<Vec<f64>>) -> Result<RawSvd> {
    let n = w.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let frob2: f64 = w.iter().map(|c| dot(c, c)).sum();
    let floor = NEGLIGIBLE_COLUMN * NEGLIGIBLE_COLUMN * frob2;
    let mut converged = n < 2;
    let mut worst = 0.0;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0_f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                let scale = (alpha * beta).sqrt();
                if gamma == 0.0 || alpha <= floor || beta <= floor {
                    continue;
                }
                let rel = gamma.abs() / scale;
                worst = worst.max(rel);
                if rel <= JACOBI_TOLERANCE {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            kernel: "jacobi svd",
            residual: worst,
        });
    }
    let mut order: Vec<(f64, usize)> = w.iter().map(|c| dot(c, c).sqrt()).zip(0..).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut u = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    for &(sigma, j) in &order {
        let col = if sigma > 0.0 {
            w[j].iter().map(|x| x / sigma).collect()
        } else {
            vec![0.0; w[j].len()]
        };
        u.push(col);
        s.push(sigma);
        vs.push(v[j].clone());
    }
    Ok(RawSvd { u, s, v: vs })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
