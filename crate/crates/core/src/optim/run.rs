//! The training loop and its recording hooks.

use super::{step, GradientProvider, OptimizerConfig, OptimizerState};
use crate::data::SpectralProfile;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::trajectory::TrajectoryRecord;

/// Loop controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Maximum number of updates.
    pub steps: usize,
    /// Stop once the full gradient norm falls below this value.
    pub stop_grad_norm: f64,
    /// Record every `record_every` steps; the final state is always recorded.
    pub record_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            steps: 100,
            stop_grad_norm: 1e-6,
            record_every: 1,
        }
    }
}

/// Per-layer `(left, right)` bases in which `leftᵀ W^l right` is diagonal
/// for trajectories confined to the spectral basis.
pub type LayerBases = Vec<(Matrix, Matrix)>;

/// Per-class metrics at a checkpoint, in spectral class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEvaluation {
    /// Per-class loss.
    pub loss: Vec<f64>,
    /// Per-class accuracy, `None` for classes without samples.
    pub accuracy: Option<Vec<Option<f64>>>,
}

/// Callback evaluating the end-to-end map at a checkpoint.
pub type Evaluator<'a> = &'a dyn Fn(&Matrix) -> Result<ClassEvaluation>;

/// What to record besides the gradient norm.
#[derive(Clone, Copy, Default)]
pub struct Recording<'a> {
    /// Spectral bases for the projected diagonal and off-diagonal residual.
    pub profile: Option<&'a SpectralProfile>,
    /// Per-layer bases for deep models.
    pub layer_bases: Option<&'a LayerBases>,
    /// Per-class loss and accuracy callback.
    pub evaluator: Option<Evaluator<'a>>,
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Recorded samples.
    pub record: TrajectoryRecord,
    /// State after the last update.
    pub final_state: OptimizerState,
    /// Updates applied.
    pub steps_taken: usize,
    /// True when the gradient-norm stop fired before the budget ran out.
    pub stopped_early: bool,
}

/// Runs `config` from `init` for up to `options.steps` updates.
///
/// At every recorded step the record receives the gradient norm and, when
/// a profile is attached, the projected diagonal `diag(Uᵀ W V)` and the
/// largest off-diagonal entry of `Uᵀ W V`. Layer bases add per-layer
/// coefficients and an evaluator adds per-class losses and accuracies.
pub fn run(
    config: &OptimizerConfig,
    provider: &GradientProvider,
    init: &OptimizerState,
    options: &RunOptions,
    recording: Recording<'_>,
) -> Result<RunOutcome> {
    let Recording {
        profile,
        layer_bases,
        evaluator,
    } = recording;
    config.validate()?;
    if options.record_every == 0 {
        return Err(Error::spec("run", "record_every must be at least 1"));
    }
    if let Some(b) = layer_bases {
        if b.len() != init.layers.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} layer bases", init.layers.len()),
                found: format!("{}", b.len()),
            });
        }
    }
    let class_order = profile.map_or_else(
        || (0..provider.shape().0).collect(),
        |p| p.user_index.clone(),
    );
    let mut record = TrajectoryRecord::new(config.rule.tag(), class_order);
    record.grad_norm = Some(Vec::new());
    if profile.is_some() {
        record.offdiag = Some(Vec::new());
    }
    if layer_bases.is_some() {
        record.layer_alpha = Some(Vec::new());
    }

    let mut state = init.clone();
    let mut t = 0;
    loop {
        let grads = provider.gradient(&state.layers)?;
        let gnorm = grads.iter().map(|g| g.inner(g)).sum::<f64>().sqrt();
        let converged = gnorm < options.stop_grad_norm;
        let last = t == options.steps || converged;
        if t % options.record_every == 0 || last {
            observe(
                &mut record,
                t,
                &state,
                gnorm,
                profile,
                layer_bases,
                evaluator,
            )?;
        }
        if last {
            return Ok(RunOutcome {
                record,
                final_state: state,
                steps_taken: t,
                stopped_early: converged && t < options.steps,
            });
        }
        state = step(config, &state, &grads)?;
        t += 1;
    }
}

fn observe(
    record: &mut TrajectoryRecord,
    t: usize,
    state: &OptimizerState,
    gnorm: f64,
    profile: Option<&SpectralProfile>,
    layer_bases: Option<&LayerBases>,
    evaluator: Option<Evaluator<'_>>,
) -> Result<()> {
    let w = state.end_to_end();
    record.times.push(t as f64);
    if let Some(g) = record.grad_norm.as_mut() {
        g.push(gnorm);
    }
    match profile {
        Some(p) => {
            let projected = p.project(&w);
            record.alpha.push(projected.diagonal());
            if let Some(o) = record.offdiag.as_mut() {
                o.push(projected.max_abs_off_diagonal());
            }
        }
        None => record.alpha.push(Vec::new()),
    }
    if let (Some(bases), Some(la)) = (layer_bases, record.layer_alpha.as_mut()) {
        let k = record.class_user_index.len();
        la.push(
            state
                .layers
                .iter()
                .zip(bases)
                .map(|(wl, (left, right))| {
                    let mut d = left.t_matmul(wl).matmul(right).diagonal();
                    d.truncate(k);
                    d
                })
                .collect(),
        );
    }
    if let Some(eval) = evaluator {
        let e = eval(&w)?;
        record.losses.get_or_insert_with(Vec::new).push(e.loss);
        if let Some(a) = e.accuracy {
            record.accuracy.get_or_insert_with(Vec::new).push(a);
        }
    }
    Ok(())
}
