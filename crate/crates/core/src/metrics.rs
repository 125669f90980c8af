//! Per-class losses and accuracies, the spectral-balance metric, and the
//! checkers for the early-training generalisation-gap inequalities.
//!
//! Two inequality families are covered. Under hypotheses on the priors,
//! the spectral flow beats the gradient flow on the minority-class loss by
//! at least `μt/4` and on the balanced loss by at least `μt/2` for
//! `t ∈ (0, t*]`; against the normalised flow both gaps are at least
//! `μt/2`.

use crate::data::{SampleBatch, SpectralProfile};
use crate::dynamics::{default_ngf_dt, gf, ngf_integrate, specgf};
use crate::error::{Error, Result};
use crate::linalg::{singular_values, Matrix, ZERO_FLOOR};
use crate::optim::cross_entropy;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Slack on the gap inequality.
pub const GAP_SLACK: f64 = 1e-9;

/// Floor applied to singular values by [`spectral_balance_kl`].
pub const KL_FLOOR: f64 = 1e-15;

/// Per-class losses with their balanced and worst-class summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Loss of every class in spectral order.
    pub per_class: Vec<f64>,
    /// Unweighted mean.
    pub balanced: f64,
    /// Maximum.
    pub worst: f64,
    /// Spectral index of the smallest prior.
    pub minority_index: usize,
    /// Spectral index of the largest prior.
    pub majority_index: usize,
}

impl LossBreakdown {
    fn new(per_class: Vec<f64>, profile: &SpectralProfile) -> Self {
        let balanced = per_class.iter().sum::<f64>() / per_class.len() as f64;
        let worst = per_class.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        LossBreakdown {
            per_class,
            balanced,
            worst,
            minority_index: profile.minority(),
            majority_index: profile.majority(),
        }
    }

    /// Minority-class loss.
    pub fn minority(&self) -> f64 {
        self.per_class[self.minority_index]
    }
}

/// Population per-class squared loss of `U diag(α) Vᵀ`,
/// `L_c = ½(1 − μ α_c)² + ½ σ² Σ_j α_j²`.
pub fn population_class_loss(profile: &SpectralProfile, alpha: &[f64]) -> Result<LossBreakdown> {
    if alpha.len() != profile.k {
        return Err(Error::ShapeMismatch {
            expected: format!("{} coefficients", profile.k),
            found: format!("{}", alpha.len()),
        });
    }
    let noise = 0.5 * profile.sigma2 * alpha.iter().map(|a| a * a).sum::<f64>();
    let per_class = alpha
        .iter()
        .map(|a| 0.5 * (1.0 - profile.mu * a).powi(2) + noise)
        .collect();
    Ok(LossBreakdown::new(per_class, profile))
}

/// Population per-class squared loss of an arbitrary end-to-end map,
/// `L_c = ½‖e_c − W μ_c‖² + ½ σ² ‖W‖_F²`, in spectral order.
pub fn population_class_loss_of(profile: &SpectralProfile, w: &Matrix) -> Result<LossBreakdown> {
    if w.shape() != (profile.k, profile.d) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", profile.k, profile.d),
            found: format!("{:?}", w.shape()),
        });
    }
    let noise = 0.5 * profile.sigma2 * w.inner(w);
    let wv = w.matmul(&profile.v);
    let per_class = (0..profile.k)
        .map(|j| {
            let residual: f64 = (0..profile.k)
                .map(|i| (profile.u[(i, j)] - profile.mu * wv[(i, j)]).powi(2))
                .sum();
            0.5 * residual + noise
        })
        .collect();
    Ok(LossBreakdown::new(per_class, profile))
}

/// Accuracy summary of a batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    /// Accuracy of every user class, `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    /// Mean over non-empty classes.
    pub balanced: f64,
    /// Minimum over non-empty classes.
    pub worst: f64,
    /// Classes absent from the batch; excluded from both summaries.
    pub empty_classes: Vec<usize>,
}

/// Index of the largest entry, ties broken toward the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Argmax-of-logits accuracy of `W` on a batch, per user class.
pub fn accuracy_metrics(w: &Matrix, batch: &SampleBatch) -> Result<AccuracyReport> {
    let k = batch.classes();
    if w.shape() != (k, batch.x.cols()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", k, batch.x.cols()),
            found: format!("{:?}", w.shape()),
        });
    }
    Ok(accuracy_from_logits(&batch.x.matmul_t(w), &batch.labels))
}

/// Accuracy of `n × k` logits against labels, per class.
pub fn accuracy_from_logits(logits: &Matrix, labels: &[usize]) -> AccuracyReport {
    let k = logits.cols();
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        if argmax(logits.row(i)) == c {
            hits[c] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| (counts[c] > 0).then(|| hits[c] as f64 / counts[c] as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    AccuracyReport {
        balanced: present.iter().sum::<f64>() / present.len().max(1) as f64,
        worst: present.iter().copied().fold(f64::INFINITY, f64::min),
        empty_classes: (0..k).filter(|&c| counts[c] == 0).collect(),
        per_class,
    }
}

/// Mean cross-entropy of every user class on a batch, `None` when absent.
pub fn class_cross_entropy(w: &Matrix, batch: &SampleBatch) -> Vec<Option<f64>> {
    class_cross_entropy_from_logits(&batch.x.matmul_t(w), &batch.labels)
}

/// Mean cross-entropy of every class from `n × k` logits.
pub fn class_cross_entropy_from_logits(logits: &Matrix, labels: &[usize]) -> Vec<Option<f64>> {
    let k = logits.cols();
    let losses = cross_entropy(logits, labels);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&c, l) in labels.iter().zip(losses) {
        sums[c] += l;
        counts[c] += 1;
    }
    (0..k)
        .map(|c| (counts[c] > 0).then(|| sums[c] / counts[c] as f64))
        .collect()
}

/// `KL(u ‖ σ/Σσ)` between the uniform vector and the normalised top-`k`
/// singular values of a `k × n` logit matrix.
///
/// Singular values are floored at [`KL_FLOOR`] before normalising.
pub fn spectral_balance_kl(logits: &Matrix) -> Result<f64> {
    let k = logits.rows();
    let mut s = singular_values(logits)?;
    let largest = s.first().copied().unwrap_or(0.0);
    if largest <= ZERO_FLOOR {
        return Err(Error::ZeroMatrix { largest });
    }
    s.resize(k, 0.0);
    let floored: Vec<f64> = s.iter().map(|&x| x.max(KL_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    let u = 1.0 / k as f64;
    Ok(floored.iter().map(|&x| u * (u / (x / total)).ln()).sum())
}

/// One of the four early-training gap statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremKind {
    /// Spectral flow vs gradient flow, minority-class loss, bound `μt/4`.
    GfMinority,
    /// Spectral flow vs gradient flow, balanced loss, bound `μt/2`.
    GfBalanced,
    /// Spectral flow vs normalised flow, minority-class loss, bound `μt/2`.
    NgfMinority,
    /// Spectral flow vs normalised flow, balanced loss, bound `μt/2`.
    NgfBalanced,
}

impl TheoremKind {
    /// All four statements.
    pub const ALL: [TheoremKind; 4] = [
        TheoremKind::GfMinority,
        TheoremKind::GfBalanced,
        TheoremKind::NgfMinority,
        TheoremKind::NgfBalanced,
    ];

    /// Tag used in reports.
    pub fn tag(self) -> &'static str {
        match self {
            TheoremKind::GfMinority => "gf_minority",
            TheoremKind::GfBalanced => "gf_balanced",
            TheoremKind::NgfMinority => "ngf_minority",
            TheoremKind::NgfBalanced => "ngf_balanced",
        }
    }

    /// Coefficient of `μ t` in the lower bound.
    pub fn bound_scale(self) -> f64 {
        match self {
            TheoremKind::GfMinority => 0.25,
            _ => 0.5,
        }
    }

    fn balanced(self) -> bool {
        matches!(self, TheoremKind::GfBalanced | TheoremKind::NgfBalanced)
    }
}

impl fmt::Display for TheoremKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Why an inequality is listed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionRole {
    /// Inequality on the priors; gates `satisfied` and enters the margin.
    Quantitative,
    /// Regime hypothesis such as `μ ≥ 1`; gates `satisfied` only.
    Regime,
    /// Hypothesis implied by a stated one being meaningful; gates `satisfied` only.
    Inferred,
    /// Stronger shorthand constants; reported for reference, never gating.
    Simplified,
}

/// Direction of an inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl fmt::Display for ConditionRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionRole::Quantitative => "quantitative",
            ConditionRole::Regime => "regime",
            ConditionRole::Inferred => "inferred",
            ConditionRole::Simplified => "simplified",
        })
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        })
    }
}

/// One evaluated inequality `lhs relation rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionTerm {
    /// Human-readable statement.
    pub name: String,
    /// Left-hand side.
    pub lhs: f64,
    /// Direction.
    pub relation: Relation,
    /// Right-hand side.
    pub rhs: f64,
    /// Whether it holds.
    pub holds: bool,
    /// Signed slack, positive inside the admissible region.
    pub slack: f64,
    /// Role of the inequality.
    pub role: ConditionRole,
}

impl ConditionTerm {
    fn new(name: &str, lhs: f64, relation: Relation, rhs: f64, role: ConditionRole) -> Self {
        let (slack, holds) = match relation {
            Relation::Le => (rhs - lhs, lhs <= rhs),
            Relation::Lt => (rhs - lhs, lhs < rhs),
            Relation::Ge => (lhs - rhs, lhs >= rhs),
            Relation::Gt => (lhs - rhs, lhs > rhs),
        };
        ConditionTerm {
            name: name.to_string(),
            lhs,
            relation,
            rhs,
            holds,
            slack,
            role,
        }
    }
}

/// Evaluated hypotheses of one statement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremConditions {
    /// Statement checked.
    pub theorem: TheoremKind,
    /// True when every gating inequality holds.
    pub satisfied: bool,
    /// Smallest slack over the quantitative inequalities.
    pub margin: f64,
    /// Every inequality evaluated, including reference-only ones.
    pub details: Vec<ConditionTerm>,
}

/// Evaluates the hypotheses of `theorem` on a profile.
pub fn check_conditions(profile: &SpectralProfile, theorem: TheoremKind) -> TheoremConditions {
    use ConditionRole::*;
    use Relation::*;
    let k = profile.k as f64;
    let mu = profile.mu;
    let snr = profile.snr;
    let p_m = profile.priors[profile.minority()];
    let p_big = profile.priors[profile.majority()];
    let spread = p_big - p_m;
    let mut terms = Vec::new();
    match theorem {
        TheoremKind::GfMinority | TheoremKind::GfBalanced => {
            terms.push(ConditionTerm::new("mu >= 1", mu, Ge, 1.0, Regime));
            terms.push(ConditionTerm::new(
                "p_m <= 1/(3 SNR + 4k)",
                p_m,
                Le,
                1.0 / (3.0 * snr + 4.0 * k),
                Quantitative,
            ));
            if theorem.balanced() {
                terms.push(ConditionTerm::new("k > 2 mu", k, Gt, 2.0 * mu, Inferred));
                terms.push(ConditionTerm::new(
                    "p_m <= (k - 2 mu)/(2 mu SNR + k SNR + 2k^2)",
                    p_m,
                    Le,
                    (k - 2.0 * mu) / (2.0 * mu * snr + k * snr + 2.0 * k * k),
                    Quantitative,
                ));
            }
            terms.push(ConditionTerm::new("k >= 3 mu", k, Ge, 3.0 * mu, Simplified));
            terms.push(ConditionTerm::new(
                "p_m <= 1/(5 SNR + 6k)",
                p_m,
                Le,
                1.0 / (5.0 * snr + 6.0 * k),
                Simplified,
            ));
        }
        TheoremKind::NgfMinority | TheoremKind::NgfBalanced => {
            let cap = 1.0 / (snr + 2.0 * k);
            terms.push(ConditionTerm::new(
                "p_m < 1/(SNR + 2k)",
                p_m,
                Lt,
                cap,
                Quantitative,
            ));
            let denom = 1.0 - p_m * (snr + 2.0 * k);
            let lift = (p_m * snr + 1.0).powi(2);
            let minority_rhs = if denom > 0.0 {
                2.0 * p_m * lift / denom
            } else {
                f64::INFINITY
            };
            terms.push(ConditionTerm::new(
                "p_M - p_m >= 2 p_m (p_m SNR + 1)^2/(1 - p_m(SNR + 2k))",
                spread,
                Ge,
                minority_rhs,
                Quantitative,
            ));
            if theorem.balanced() {
                let balanced_rhs = if denom > 0.0 {
                    2.0 * lift / (k * denom)
                } else {
                    f64::INFINITY
                };
                terms.push(ConditionTerm::new(
                    "p_M - p_m >= 2 (p_m SNR + 1)^2/(k (1 - p_m(SNR + 2k)))",
                    spread,
                    Ge,
                    balanced_rhs,
                    Quantitative,
                ));
            }
            terms.push(ConditionTerm::new(
                "p_m <= 1/(2 SNR + 4k)",
                p_m,
                Le,
                1.0 / (2.0 * snr + 4.0 * k),
                Simplified,
            ));
            let spread_floor = if spread > 0.0 {
                9.0 / spread
            } else {
                f64::INFINITY
            };
            terms.push(ConditionTerm::new(
                "k >= 9/(p_M - p_m)",
                k,
                Ge,
                spread_floor,
                Simplified,
            ));
        }
    }
    let satisfied = terms
        .iter()
        .filter(|t| t.role != Simplified)
        .all(|t| t.holds);
    let margin = terms
        .iter()
        .filter(|t| t.role == Quantitative)
        .map(|t| t.slack)
        .fold(f64::INFINITY, f64::min);
    TheoremConditions {
        theorem,
        satisfied,
        margin,
        details: terms,
    }
}

/// One point of a gap verification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapPoint {
    /// Time.
    pub t: f64,
    /// Loss of the compared flow minus loss of the spectral flow.
    pub gap: f64,
    /// Lower bound claimed for the gap.
    pub bound: f64,
    /// `gap ≥ bound − GAP_SLACK`.
    pub holds: bool,
}

/// Controls of [`gap_verify`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GapOptions {
    /// Evaluate even if the hypotheses fail or the grid leaves `(0, t*]`.
    pub allow_outside: bool,
    /// Replace the bound by zero.
    pub relax_bound: bool,
    /// Integrator step for the normalised flow; defaults to `10⁻⁴ t*`.
    pub ngf_dt: Option<f64>,
}

/// Evaluates the loss gap of `theorem` on every time of `t_grid`.
///
/// The spectral and gradient flows are analytic; the normalised flow is
/// integrated with RK4.
pub fn gap_verify(
    profile: &SpectralProfile,
    theorem: TheoremKind,
    t_grid: &[f64],
    options: GapOptions,
) -> Result<Vec<GapPoint>> {
    let conditions = check_conditions(profile, theorem);
    if !options.allow_outside {
        if !conditions.satisfied {
            let failed: Vec<String> = conditions
                .details
                .iter()
                .filter(|t| t.role != ConditionRole::Simplified && !t.holds)
                .map(|t| format!("{} ({} vs {})", t.name, t.lhs, t.rhs))
                .collect();
            return Err(Error::ConditionsNotMet(format!(
                "{theorem}: {}",
                failed.join("; ")
            )));
        }
        let t_star = profile.t_star();
        if t_grid
            .iter()
            .any(|&t| !(t > 0.0 && t <= t_star * (1.0 + 1e-12)))
        {
            return Err(Error::spec(
                "gap grid",
                format!("times must lie in (0, t*], t* = {t_star}"),
            ));
        }
    }
    let compared: Vec<Vec<f64>> = match theorem {
        TheoremKind::GfMinority | TheoremKind::GfBalanced => {
            t_grid.iter().map(|&t| gf(profile, t)).collect()
        }
        TheoremKind::NgfMinority | TheoremKind::NgfBalanced => {
            let dt = options.ngf_dt.unwrap_or_else(|| default_ngf_dt(profile));
            ngf_integrate(profile, t_grid, dt)?.alpha
        }
    };
    t_grid
        .iter()
        .zip(compared)
        .map(|(&t, other)| {
            let a = population_class_loss(profile, &other)?;
            let b = population_class_loss(profile, &specgf(profile, t))?;
            let gap = if theorem.balanced() {
                a.balanced - b.balanced
            } else {
                a.minority() - b.minority()
            };
            let bound = if options.relax_bound {
                0.0
            } else {
                theorem.bound_scale() * profile.mu * t
            };
            Ok(GapPoint {
                t,
                gap,
                bound,
                holds: gap >= bound - GAP_SLACK,
            })
        })
        .collect()
}

/// `n` evenly spaced points on `(0, end]`.
pub fn open_grid(end: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| end * i as f64 / n as f64).collect()
}
