//! Gradients of the squared and cross-entropy losses for linear and deep
//! linear models.

use super::{product, OptimizerState};
use crate::data::{empirical_moments, SampleBatch, SpectralProfile};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Source of loss gradients for a stack of layers `W^{L-1} ⋯ W^0`.
///
/// The squared loss depends on the data only through the moments
/// `Σ_xx = E[xxᵀ]` and `Σ_yx = E[yxᵀ]`, so the population and empirical
/// versions share one variant.
#[derive(Debug, Clone)]
pub enum GradientProvider {
    /// `½ E‖y − W x‖²` with one-hot `y`.
    SquaredLoss { sigma_xx: Matrix, sigma_yx: Matrix },
    /// Mean softmax cross-entropy over a batch.
    CrossEntropy { batch: SampleBatch },
}

impl GradientProvider {
    /// Population squared loss reconstructed from the joint spectra.
    pub fn population(profile: &SpectralProfile) -> Self {
        GradientProvider::SquaredLoss {
            sigma_xx: profile.sigma_xx(),
            sigma_yx: profile.sigma_yx(),
        }
    }

    /// Squared loss on the empirical moments of a batch.
    pub fn empirical_squared(batch: &SampleBatch) -> Self {
        let (sigma_xx, sigma_yx) = empirical_moments(batch);
        GradientProvider::SquaredLoss { sigma_xx, sigma_yx }
    }

    /// Cross-entropy on a batch.
    pub fn empirical_cross_entropy(batch: SampleBatch) -> Self {
        GradientProvider::CrossEntropy { batch }
    }

    /// `(k, d)`, the shape of the end-to-end map.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            GradientProvider::SquaredLoss { sigma_yx, .. } => sigma_yx.shape(),
            GradientProvider::CrossEntropy { batch } => (batch.y.cols(), batch.x.cols()),
        }
    }

    fn check(&self, w: &Matrix) -> Result<()> {
        if w.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("end-to-end map {:?}", self.shape()),
                found: format!("{:?}", w.shape()),
            });
        }
        Ok(())
    }

    /// Gradient with respect to the end-to-end map.
    pub fn end_to_end_gradient(&self, w: &Matrix) -> Result<Matrix> {
        self.check(w)?;
        match self {
            GradientProvider::SquaredLoss { sigma_xx, sigma_yx } => {
                Ok(w.matmul(sigma_xx).lincomb(1.0, sigma_yx, -1.0))
            }
            GradientProvider::CrossEntropy { batch } => {
                let mut residual = softmax_rows(&batch.x.matmul_t(w));
                let n = batch.len() as f64;
                residual = residual.lincomb(1.0 / n, &batch.y, -1.0 / n);
                Ok(residual.t_matmul(&batch.x))
            }
        }
    }

    /// Per-layer gradients `∇_{W^l} = A_lᵀ ∇_W B_lᵀ` with
    /// `A_l = W^{L-1} ⋯ W^{l+1}` and `B_l = W^{l-1} ⋯ W^0`.
    pub fn gradient(&self, layers: &[Matrix]) -> Result<Vec<Matrix>> {
        if layers.is_empty() {
            return Err(Error::Dimension("a model has at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer with {} columns", pair[0].rows()),
                    found: format!("{:?}", pair[1].shape()),
                });
            }
        }
        let g = self.end_to_end_gradient(&product(layers))?;
        let depth = layers.len();
        if depth == 1 {
            return Ok(vec![g]);
        }
        // below[l] = B_l (None for the identity when l = 0).
        let mut below: Vec<Option<Matrix>> = vec![None];
        for l in 1..depth {
            let next = match &below[l - 1] {
                None => layers[0].clone(),
                Some(b) => layers[l - 1].matmul(b),
            };
            below.push(Some(next));
        }
        let mut grads = vec![Matrix::zeros(1, 1); depth];
        let mut above: Option<Matrix> = None;
        for l in (0..depth).rev() {
            let left = match &above {
                None => g.clone(),
                Some(a) => a.t_matmul(&g),
            };
            grads[l] = match &below[l] {
                None => left,
                Some(b) => left.matmul_t(b),
            };
            above = Some(match above {
                None => layers[l].clone(),
                Some(a) => a.matmul(&layers[l]),
            });
        }
        Ok(grads)
    }

    /// Gradients for the layers of an optimizer state.
    pub fn state_gradient(&self, state: &OptimizerState) -> Result<Vec<Matrix>> {
        self.gradient(&state.layers)
    }

    /// Loss of the end-to-end map.
    pub fn loss(&self, w: &Matrix) -> Result<f64> {
        self.check(w)?;
        match self {
            GradientProvider::SquaredLoss { sigma_xx, sigma_yx } => {
                let quad = w.matmul(sigma_xx).inner(w);
                Ok(0.5 * (1.0 - 2.0 * w.inner(sigma_yx) + quad))
            }
            GradientProvider::CrossEntropy { batch } => {
                Ok(cross_entropy(&batch.x.matmul_t(w), &batch.labels)
                    .iter()
                    .sum::<f64>()
                    / batch.len() as f64)
            }
        }
    }
}

/// Row-wise softmax computed with the max-shift for stability.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = (v - m).exp() / z;
        }
    }
    out
}

/// Per-row cross-entropy `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let row = logits.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            lse - row[c]
        })
        .collect()
}
