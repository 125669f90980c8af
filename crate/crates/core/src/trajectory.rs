//! Time-indexed diagonal coefficients and per-class metrics of a run or of
//! an analytic trajectory.

use serde::Serialize;

/// Samples of a trajectory.
///
/// Component and class vectors are in spectral order (largest prior first);
/// `class_user_index` maps them back to user labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    /// Algorithm tag, e.g. `specgd` or `ngf`.
    pub algo: String,
    /// Step indices or continuous times, strictly increasing.
    pub times: Vec<f64>,
    /// `alpha[i][c]`, diagonal coefficient `c` at sample `i`. Empty rows
    /// when no spectral basis is attached.
    pub alpha: Vec<Vec<f64>>,
    /// `layer_alpha[i][l][c]` for deep models.
    pub layer_alpha: Option<Vec<Vec<Vec<f64>>>>,
    /// Largest off-diagonal entry of the projected iterate.
    pub offdiag: Option<Vec<f64>>,
    /// Frobenius norm of the full gradient.
    pub grad_norm: Option<Vec<f64>>,
    /// `losses[i][c]`, per-class loss.
    pub losses: Option<Vec<Vec<f64>>>,
    /// `accuracy[i][c]`, per-class accuracy; `None` for classes without samples.
    pub accuracy: Option<Vec<Vec<Option<f64>>>>,
    /// User label of every spectral class index.
    pub class_user_index: Vec<usize>,
}

impl TrajectoryRecord {
    /// Empty record for `algo`.
    pub fn new(algo: impl Into<String>, class_user_index: Vec<usize>) -> Self {
        TrajectoryRecord {
            algo: algo.into(),
            times: Vec::new(),
            alpha: Vec::new(),
            layer_alpha: None,
            offdiag: None,
            grad_norm: None,
            losses: None,
            accuracy: None,
            class_user_index,
        }
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// True when nothing was recorded.
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Coefficient `c` along the whole trajectory.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.alpha.iter().map(|a| a[c]).collect()
    }
}
