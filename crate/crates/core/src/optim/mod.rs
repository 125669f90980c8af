//! Matrix update rules, gradient providers and the training loop.
//!
//! Every rule has the form `W ← W − η Δ`, with Δ chosen per rule:
//!
//! | rule      | Δ                                             |
//! |-----------|-----------------------------------------------|
//! | `gd`      | `G`                                           |
//! | `ngd`     | `G / ‖G‖_F`                                   |
//! | `signgd`  | `sign(G)`                                     |
//! | `specgd`  | `U Vᵀ` from the truncated SVD of `G`          |
//! | `nmd`     | `M / ‖M‖_F`, `M ← βM + (1−β)G`                |
//! | `signum`  | `sign(M)`                                     |
//! | `muon`    | polar factor of `M`                           |
//! | `shampoo` | `L^{-1/4} M R^{-1/4}`, `L ← β₂L + (1−β₂)GGᵀ`, `R ← β₂R + (1−β₂)GᵀG`, `M ← β₁M + (1−β₁)G` |
//! | `adam`    | `M̂ / sqrt(Ẑ + ε)` with bias-corrected first and second moments |
//!
//! A gradient whose entries are all at or below [`ZERO_FLOOR`] yields a zero
//! step for every rule; accumulators are still updated.

mod gradient;
mod run;

pub use gradient::{cross_entropy, softmax_rows, GradientProvider};
pub use run::{run, ClassEvaluation, Evaluator, LayerBases, Recording, RunOptions, RunOutcome};

use crate::error::{Error, Result};
use crate::linalg::{
    inverse_root, polar_factor, sign_matrix, Matrix, NormKind, PolarMethod, ZERO_FLOOR,
};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Update rule identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Gd,
    Ngd,
    #[serde(rename = "signgd")]
    SignGd,
    #[serde(rename = "specgd")]
    SpecGd,
    Nmd,
    Signum,
    Muon,
    Shampoo,
    Adam,
}

impl Rule {
    /// Every rule, in table order.
    pub const ALL: [Rule; 9] = [
        Rule::Gd,
        Rule::Ngd,
        Rule::SignGd,
        Rule::SpecGd,
        Rule::Nmd,
        Rule::Signum,
        Rule::Muon,
        Rule::Shampoo,
        Rule::Adam,
    ];

    /// Lower-case tag used in configs and CSV files.
    pub fn tag(self) -> &'static str {
        match self {
            Rule::Gd => "gd",
            Rule::Ngd => "ngd",
            Rule::SignGd => "signgd",
            Rule::SpecGd => "specgd",
            Rule::Nmd => "nmd",
            Rule::Signum => "signum",
            Rule::Muon => "muon",
            Rule::Shampoo => "shampoo",
            Rule::Adam => "adam",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Hyperparameters of one optimizer. Parameters a rule does not use are
/// ignored but kept so that run manifests record them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Update rule.
    pub rule: Rule,
    /// Step size.
    pub eta: f64,
    /// Momentum for `nmd`, `signum` and `muon`.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// First-moment decay for `adam` and `shampoo`.
    #[serde(default = "default_beta")]
    pub beta1: f64,
    /// Second-moment and preconditioner decay for `adam` and `shampoo`.
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Stabiliser inside the Adam square root.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Damping added to the Shampoo preconditioners before the inverse root.
    #[serde(default)]
    pub shampoo_epsilon: f64,
    /// Polar factor method for `specgd` and `muon`.
    #[serde(default)]
    pub polar_method: PolarMethod,
}

fn default_beta() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    /// Config with default hyperparameters.
    pub fn new(rule: Rule, eta: f64) -> Self {
        OptimizerConfig {
            rule,
            eta,
            beta: default_beta(),
            beta1: default_beta(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            shampoo_epsilon: 0.0,
            polar_method: PolarMethod::ExactSvd,
        }
    }

    /// Sets every momentum and decay parameter and both stabilisers to zero.
    pub fn memoryless(mut self) -> Self {
        self.beta = 0.0;
        self.beta1 = 0.0;
        self.beta2 = 0.0;
        self.epsilon = 0.0;
        self.shampoo_epsilon = 0.0;
        self
    }

    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::spec("optimizer", msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        for (name, b) in [
            ("beta", self.beta),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        for (name, e) in [
            ("epsilon", self.epsilon),
            ("shampoo_epsilon", self.shampoo_epsilon),
        ] {
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {e}"));
            }
        }
        Ok(())
    }
}

/// Iterate and accumulators of every layer.
///
/// `layers[0]` acts on the input; for a linear model there is one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Weights, input layer first.
    pub layers: Vec<Matrix>,
    /// First moments, one per layer.
    pub momentum: Vec<Matrix>,
    /// Adam second moments, one per layer.
    pub second_moment: Vec<Matrix>,
    /// Shampoo left preconditioners, `rows × rows`.
    pub left: Vec<Matrix>,
    /// Shampoo right preconditioners, `cols × cols`.
    pub right: Vec<Matrix>,
    /// Number of updates applied.
    pub step: usize,
}

impl OptimizerState {
    /// Fresh state with zero accumulators.
    pub fn new(layers: Vec<Matrix>) -> Self {
        assert!(!layers.is_empty(), "a model has at least one layer");
        let zeros_like = |w: &Matrix| Matrix::zeros(w.rows(), w.cols());
        OptimizerState {
            momentum: layers.iter().map(zeros_like).collect(),
            second_moment: layers.iter().map(zeros_like).collect(),
            left: layers
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.rows()))
                .collect(),
            right: layers
                .iter()
                .map(|w| Matrix::zeros(w.cols(), w.cols()))
                .collect(),
            layers,
            step: 0,
        }
    }

    /// Single-layer state.
    pub fn linear(w: Matrix) -> Self {
        Self::new(vec![w])
    }

    /// End-to-end map `W^{L-1} ⋯ W^0`.
    pub fn end_to_end(&self) -> Matrix {
        product(&self.layers)
    }
}

/// `layers[last] ⋯ layers[0]`.
pub(crate) fn product(layers: &[Matrix]) -> Matrix {
    let mut p = layers[0].clone();
    for w in &layers[1..] {
        p = w.matmul(&p);
    }
    p
}

/// Steepest-descent direction of unit dual norm: `A/‖A‖_F` for Frobenius,
/// `sign(A)` for max-abs and the polar factor for spectral.
///
/// A numerically zero input yields a zero direction.
pub fn steepest_direction(a: &Matrix, norm: NormKind, polar: PolarMethod) -> Result<Matrix> {
    if a.max_abs() <= ZERO_FLOOR {
        return Ok(Matrix::zeros(a.rows(), a.cols()));
    }
    match norm {
        NormKind::Frobenius => Ok(a.scale(1.0 / a.frobenius())),
        NormKind::MaxAbs => Ok(sign_matrix(a)),
        NormKind::Spectral => polar_factor(a, polar),
        NormKind::Nuclear => Err(Error::spec(
            "optimizer",
            "no steepest-descent rule is defined for the nuclear norm",
        )),
    }
}

/// Applies one update of `config.rule` to every layer.
///
/// `grads[l]` must have the shape of `state.layers[l]`. Fails with
/// [`Error::NonFiniteUpdate`] carrying `state.step` if any new entry is not
/// finite.
pub fn step(
    config: &OptimizerConfig,
    state: &OptimizerState,
    grads: &[Matrix],
) -> Result<OptimizerState> {
    if grads.len() != state.layers.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} layer gradients", state.layers.len()),
            found: format!("{}", grads.len()),
        });
    }
    let mut next = state.clone();
    for (l, g) in grads.iter().enumerate() {
        if g.shape() != state.layers[l].shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", state.layers[l].shape()),
                found: format!("{:?}", g.shape()),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteUpdate { step: state.step });
        }
        let delta = layer_direction(config, &mut next, l, g, state.step)?;
        let w = state.layers[l].lincomb(1.0, &delta, -config.eta);
        if !w.is_finite() {
            return Err(Error::NonFiniteUpdate { step: state.step });
        }
        next.layers[l] = w;
    }
    next.step = state.step + 1;
    Ok(next)
}

fn layer_direction(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    l: usize,
    g: &Matrix,
    t: usize,
) -> Result<Matrix> {
    let ema = |acc: &Matrix, beta: f64, x: &Matrix| acc.lincomb(beta, x, 1.0 - beta);
    let polar = config.polar_method;
    match config.rule {
        Rule::Gd => Ok(if g.max_abs() <= ZERO_FLOOR {
            Matrix::zeros(g.rows(), g.cols())
        } else {
            g.clone()
        }),
        Rule::Ngd => steepest_direction(g, NormKind::Frobenius, polar),
        Rule::SignGd => steepest_direction(g, NormKind::MaxAbs, polar),
        Rule::SpecGd => steepest_direction(g, NormKind::Spectral, polar),
        Rule::Nmd | Rule::Signum | Rule::Muon => {
            state.momentum[l] = ema(&state.momentum[l], config.beta, g);
            let norm = match config.rule {
                Rule::Nmd => NormKind::Frobenius,
                Rule::Signum => NormKind::MaxAbs,
                _ => NormKind::Spectral,
            };
            steepest_direction(&state.momentum[l], norm, polar)
        }
        Rule::Shampoo => {
            state.left[l] = ema(&state.left[l], config.beta2, &g.matmul_t(g));
            state.right[l] = ema(&state.right[l], config.beta2, &g.t_matmul(g));
            state.momentum[l] = ema(&state.momentum[l], config.beta1, g);
            let m = &state.momentum[l];
            if m.max_abs() <= ZERO_FLOOR {
                return Ok(Matrix::zeros(g.rows(), g.cols()));
            }
            let lr = inverse_root(&state.left[l], 4.0, config.shampoo_epsilon)?;
            let rr = inverse_root(&state.right[l], 4.0, config.shampoo_epsilon)?;
            Ok(lr.matmul(m).matmul(&rr))
        }
        Rule::Adam => {
            state.momentum[l] = ema(&state.momentum[l], config.beta1, g);
            state.second_moment[l] = ema(&state.second_moment[l], config.beta2, &g.map(|x| x * x));
            let power = (t + 1) as i32;
            let c1 = 1.0 - config.beta1.powi(power);
            let c2 = 1.0 - config.beta2.powi(power);
            Ok(state.momentum[l].zip_map(&state.second_moment[l], |m, z| {
                let den = (z / c2 + config.epsilon).sqrt();
                if den > 0.0 {
                    (m / c1) / den
                } else {
                    0.0
                }
            }))
        }
    }
}
