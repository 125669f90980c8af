//! Closed-form trajectories of the diagonal coefficients `α_c(t)` and the
//! normalised gradient flow ODE.
//!
//! Under shared singular bases every iterate started from zero stays of
//! the form `U diag(α) Vᵀ`, and the coefficients evolve independently:
//!
//! - gradient descent: `α_c = (s_yx/s_xx)(1 − (1 − η s_xx)^t)`;
//! - gradient flow: `α_c = (s_yx/s_xx)(1 − e^{−t s_xx})`;
//! - spectral descent: `α_c = η t` until `t = s_yx/(η s_xx)`, then `s_yx/s_xx`;
//! - spectral flow: the same with `η t` replaced by `t`;
//! - normalised flow: `α̇_c = r_c / ‖r‖` with `r_c = s_yx − s_xx α_c`,
//!   integrated numerically;
//! - layerwise spectral descent on `L` stacked layers from the scaled
//!   initialisation `e^{−δ}`: every layer follows `η t + e^{−δ}` until it
//!   reaches `(s_yx/s_xx)^{1/L}`.

use crate::data::SpectralProfile;
use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal, Matrix};
use crate::optim::{LayerBases, OptimizerState};
use crate::trajectory::TrajectoryRecord;
use serde::{Deserialize, Serialize};

/// Absolute slack on the saturation comparisons `t ≤ threshold`.
pub const SATURATION_SLACK: f64 = 1e-12;

/// Residual norm below which the normalised flow is considered converged.
pub const NGF_CUTOFF: f64 = 1e-12;

/// Largest step size for which gradient descent is stable, `1 / max s_xx`.
pub fn gd_stability_bound(profile: &SpectralProfile) -> f64 {
    1.0 / profile.s_xx.iter().copied().fold(0.0, f64::max)
}

/// Gradient descent with step `eta` after `t` steps.
pub fn gd_discrete(profile: &SpectralProfile, eta: f64, t: usize) -> Result<Vec<f64>> {
    let bound = gd_stability_bound(profile);
    if !(eta > 0.0 && eta < bound) {
        return Err(Error::StepSizeTooLarge { eta, bound });
    }
    Ok((0..profile.k)
        .map(|c| {
            let s = profile.s_xx[c];
            profile.ratio(c) * (1.0 - (1.0 - eta * s).powi(t as i32))
        })
        .collect())
}

/// Gradient flow at time `t`.
pub fn gf(profile: &SpectralProfile, t: f64) -> Vec<f64> {
    (0..profile.k)
        .map(|c| profile.ratio(c) * -(-t * profile.s_xx[c]).exp_m1())
        .collect()
}

/// Spectral descent with step `eta` after `t` steps.
///
/// Requires `eta` below every terminal coefficient, so that no component
/// saturates on the first step.
pub fn specgd_discrete(profile: &SpectralProfile, eta: f64, t: usize) -> Result<Vec<f64>> {
    let bound = profile.t_star();
    if !(eta > 0.0 && eta < bound) {
        return Err(Error::StepSizeTooLarge { eta, bound });
    }
    let t = t as f64;
    Ok((0..profile.k)
        .map(|c| {
            let ratio = profile.ratio(c);
            if t <= ratio / eta + SATURATION_SLACK {
                eta * t
            } else {
                ratio
            }
        })
        .collect())
}

/// Spectral flow at time `t`.
pub fn specgf(profile: &SpectralProfile, t: f64) -> Vec<f64> {
    profile
        .ratios()
        .into_iter()
        .map(|ratio| {
            if t <= ratio + SATURATION_SLACK {
                t
            } else {
                ratio
            }
        })
        .collect()
}

/// Saturation times of the spectral flow, one per component.
pub fn saturation_times(profile: &SpectralProfile) -> Vec<f64> {
    profile.ratios()
}

/// Saturation step thresholds `s_yx / (η s_xx)` of spectral descent.
pub fn saturation_steps(profile: &SpectralProfile, eta: f64) -> Vec<f64> {
    profile.ratios().into_iter().map(|r| r / eta).collect()
}

/// State of the normalised flow at given coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NgfState {
    /// Diagonal coefficients.
    pub alpha: Vec<f64>,
    /// Residuals `r_c = s_yx[c] − s_xx[c] α_c`.
    pub r: Vec<f64>,
    /// `‖r‖₂`.
    pub big_r: f64,
}

/// Residuals and their norm at `alpha`.
pub fn ngf_state(profile: &SpectralProfile, alpha: &[f64]) -> NgfState {
    let r: Vec<f64> = (0..profile.k)
        .map(|c| profile.s_yx[c] - profile.s_xx[c] * alpha[c])
        .collect();
    let big_r = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    NgfState {
        alpha: alpha.to_vec(),
        r,
        big_r,
    }
}

/// Right-hand side `r / ‖r‖` of the normalised flow, zero once converged.
pub fn ngf_rhs(profile: &SpectralProfile, alpha: &[f64]) -> Vec<f64> {
    let s = ngf_state(profile, alpha);
    if s.big_r < NGF_CUTOFF {
        vec![0.0; profile.k]
    } else {
        s.r.iter().map(|x| x / s.big_r).collect()
    }
}

/// Default internal step of the flow integrator, `10⁻⁴ t*`.
pub fn default_ngf_dt(profile: &SpectralProfile) -> f64 {
    1e-4 * profile.t_star()
}

/// Integrates the normalised flow from zero with classical RK4 at step
/// `dt`, sampling at every time of `t_grid`.
///
/// The last sub-step before each sample is shortened to land on it exactly.
/// The flow moves at unit speed and reaches the terminal point in finite
/// time, where its direction field is discontinuous. Sub-steps are therefore
/// capped at an eighth of the remaining distance, which keeps the endpoint
/// resolved and avoids RK4 stalling at a spurious fixed point within `dt/2`
/// of it. Once `‖r‖ < NGF_CUTOFF` the state is frozen.
pub fn ngf_integrate(
    profile: &SpectralProfile,
    t_grid: &[f64],
    dt: f64,
) -> Result<TrajectoryRecord> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::spec(
            "flow integrator",
            format!("dt must be positive, got {dt}"),
        ));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0))
        || t_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::spec(
            "flow integrator",
            "time grid must be nonnegative and strictly increasing",
        ));
    }
    let mut record = TrajectoryRecord::new("ngf", profile.user_index.clone());
    let mut alpha = vec![0.0; profile.k];
    let terminal = profile.ratios();
    let mut t = 0.0;
    for &target in t_grid {
        while target - t > 1e-15 * target.max(1.0) {
            if ngf_state(profile, &alpha).big_r < NGF_CUTOFF {
                t = target;
                break;
            }
            let distance = alpha
                .iter()
                .zip(&terminal)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let h = dt.min(target - t).min(distance / 8.0);
            alpha = rk4(profile, &alpha, h);
            t += h;
        }
        t = t.max(target);
        record.times.push(target);
        record.alpha.push(alpha.clone());
    }
    Ok(record)
}

fn rk4(profile: &SpectralProfile, a: &[f64], h: f64) -> Vec<f64> {
    let shift = |b: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        b.iter().zip(k).map(|(x, y)| x + s * y).collect()
    };
    let k1 = ngf_rhs(profile, a);
    let k2 = ngf_rhs(profile, &shift(a, &k1, h / 2.0));
    let k3 = ngf_rhs(profile, &shift(a, &k2, h / 2.0));
    let k4 = ngf_rhs(profile, &shift(a, &k3, h));
    (0..a.len())
        .map(|c| a[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]))
        .collect()
}

/// Layered model with scaled orthonormal initialisation.
///
/// Layer `0` is `e^{−δ} Q_1 [I 0] Vᵀ`, middle layers are `e^{−δ} Q_{l+1} Q_lᵀ`
/// and the top layer is `e^{−δ} U [I_k 0] Q_{L−1}ᵀ`, with `Q_l` seeded
/// `d_1 × d_1` orthonormal matrices. Depth one is `e^{−δ} U [I_k 0] Vᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepInitSpec {
    /// Number of layers `L ≥ 1`.
    pub depth: usize,
    /// Initialisation exponent, every layer starts at scale `e^{−δ}`.
    pub delta: f64,
    /// Hidden width `d_1`; defaults to the input dimension.
    #[serde(default)]
    pub inner_width: Option<usize>,
    /// Seed of the hidden bases.
    #[serde(default)]
    pub basis_seed: u64,
}

impl DeepInitSpec {
    /// Hidden width for a profile.
    pub fn width(&self, profile: &SpectralProfile) -> usize {
        self.inner_width.unwrap_or(profile.d)
    }

    /// `e^{−δ}`.
    pub fn init_scale(&self) -> f64 {
        (-self.delta).exp()
    }

    /// Checks depth, scale and widths against a profile.
    pub fn validate(&self, profile: &SpectralProfile) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::spec("deep init", "depth must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::spec(
                "deep init",
                format!("delta must be positive, got {}", self.delta),
            ));
        }
        let (k, d, d1) = (profile.k, profile.d, self.width(profile));
        if self.depth == 2 && !(k < d1 && d1 < d) {
            return Err(Error::spec(
                "deep init",
                format!("two layers need k < inner_width < d, got k={k}, inner_width={d1}, d={d}"),
            ));
        }
        if self.depth > 2 && d1 < k {
            return Err(Error::spec(
                "deep init",
                format!("inner_width must be at least k={k}, got {d1}"),
            ));
        }
        if self.depth > 2 && d1 > d {
            return Err(Error::spec(
                "deep init",
                format!("inner_width must not exceed d={d}, got {d1}"),
            ));
        }
        Ok(())
    }

    /// Advisory messages about assumptions the closed forms rely on.
    pub fn warnings(&self, profile: &SpectralProfile, eta: f64) -> Vec<String> {
        let mut w = Vec::new();
        if self.init_scale() > 0.01 * eta {
            w.push(format!(
                "initial scale e^-delta = {:.3e} exceeds 0.01 * eta = {:.3e}; the closed form assumes a small initialisation",
                self.init_scale(),
                0.01 * eta
            ));
        }
        if self.depth > 2 && profile.k != profile.d {
            w.push(format!(
                "depth {} with k={} < d={}: the closed form is only established for k = d",
                self.depth, profile.k, profile.d
            ));
        }
        w
    }

    /// Initial layers and the per-layer bases that diagonalise them.
    pub fn build(&self, profile: &SpectralProfile) -> Result<(OptimizerState, LayerBases)> {
        self.validate(profile)?;
        let (k, d) = (profile.k, profile.d);
        let s = self.init_scale();
        let depth = self.depth;
        if depth == 1 {
            let w = profile
                .u
                .matmul(&Matrix::diag_rect(k, d, &vec![s; k]))
                .matmul_t(&profile.v);
            return Ok((
                OptimizerState::linear(w),
                vec![(profile.u.clone(), profile.v.clone())],
            ));
        }
        let d1 = self.width(profile);
        let hidden: Vec<Matrix> = (1..depth)
            .map(|l| random_orthonormal(d1, d1, self.basis_seed.wrapping_add(l as u64)))
            .collect::<Result<_>>()?;
        let mut layers = Vec::with_capacity(depth);
        let mut bases = Vec::with_capacity(depth);
        layers.push(
            hidden[0]
                .matmul(&Matrix::diag_rect(d1, d, &vec![s; d1]))
                .matmul_t(&profile.v),
        );
        bases.push((hidden[0].clone(), profile.v.clone()));
        for l in 1..depth - 1 {
            layers.push(hidden[l].matmul_t(&hidden[l - 1]).scale(s));
            bases.push((hidden[l].clone(), hidden[l - 1].clone()));
        }
        let top = &hidden[depth - 2];
        layers.push(
            profile
                .u
                .matmul(&Matrix::diag_rect(k, d1, &vec![s; k]))
                .matmul_t(top),
        );
        bases.push((profile.u.clone(), top.clone()));
        Ok((OptimizerState::new(layers), bases))
    }
}

/// Per-layer diagonal of layerwise spectral descent after `t` steps.
///
/// Returns `depth` identical rows of length `k`.
pub fn deep_specgd(
    profile: &SpectralProfile,
    init: &DeepInitSpec,
    eta: f64,
    t: usize,
) -> Result<Vec<Vec<f64>>> {
    if init.depth == 0 {
        return Err(Error::spec("deep init", "depth must be at least 1"));
    }
    let root = 1.0 / init.depth as f64;
    let targets: Vec<f64> = profile.ratios().into_iter().map(|r| r.powf(root)).collect();
    let bound = targets.iter().copied().fold(f64::INFINITY, f64::min);
    if !(eta > 0.0 && eta < bound) {
        return Err(Error::StepSizeTooLarge { eta, bound });
    }
    let s = init.init_scale();
    let t = t as f64;
    let row: Vec<f64> = targets
        .iter()
        .map(|&target| {
            if t <= (target - s) / eta + SATURATION_SLACK {
                eta * t + s
            } else {
                target
            }
        })
        .collect();
    Ok(vec![row; init.depth])
}

/// Both layer diagonals of two-layer spectral descent after `t` steps.
pub fn bilinear_specgd(
    profile: &SpectralProfile,
    init: &DeepInitSpec,
    eta: f64,
    t: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if init.depth != 2 {
        return Err(Error::spec(
            "deep init",
            format!("two layers expected, got {}", init.depth),
        ));
    }
    let mut rows = deep_specgd(profile, init, eta, t)?;
    let top = rows.pop().expect("two rows");
    let bottom = rows.pop().expect("two rows");
    Ok((bottom, top))
}

/// Relative gap between the last and first saturation, `(ratio_max/ratio_min)^{1/L} − 1`.
pub fn saturation_gap(profile: &SpectralProfile, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::spec("saturation gap", "depth must be at least 1"));
    }
    let ratios = profile.ratios();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((max / min).powf(1.0 / depth as f64) - 1.0)
}

/// The same gap written in terms of the signal-to-noise ratio and the
/// extreme priors, `((SNR + 1/p_m)/(SNR + 1/p_M))^{1/L} − 1`.
pub fn saturation_gap_from_priors(snr: f64, p_min: f64, p_max: f64, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::spec("saturation gap", "depth must be at least 1"));
    }
    Ok(((snr + 1.0 / p_min) / (snr + 1.0 / p_max)).powf(1.0 / depth as f64) - 1.0)
}

/// Steps for gradient descent to bring component `c` within a factor
/// `epsilon` of its terminal value, `ln ε / ln(1 − η s_xx[c])`.
pub fn gd_epsilon_time(profile: &SpectralProfile, eta: f64, epsilon: f64, c: usize) -> Result<f64> {
    let bound = gd_stability_bound(profile);
    if !(eta > 0.0 && eta < bound) {
        return Err(Error::StepSizeTooLarge { eta, bound });
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::spec(
            "epsilon time",
            format!("epsilon must lie in (0, 1), got {epsilon}"),
        ));
    }
    if c >= profile.k {
        return Err(Error::Dimension(format!(
            "component {c} out of range for k={}",
            profile.k
        )));
    }
    Ok(epsilon.ln() / (-eta * profile.s_xx[c]).ln_1p())
}
