//! Experiment execution: spectra, closed-form trajectories, simulations
//! and loss summaries.

use super::config::{ExperimentConfig, InitKind, LossKind, ProviderKind};
use super::io::{LossRow, RunManifest};
use crate::data::{population_spectra, sample_stream, DataModelSpec, SampleBatch, SpectralProfile};
use crate::dynamics::{
    deep_specgd, default_ngf_dt, gd_discrete, gf, ngf_integrate, saturation_gap, specgd_discrete,
    specgf, DeepInitSpec,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{
    accuracy_from_logits, check_conditions, class_cross_entropy_from_logits,
    population_class_loss_of, TheoremConditions, TheoremKind,
};
use crate::optim::{
    run, ClassEvaluation, GradientProvider, OptimizerState, Recording, Rule, RunOptions,
};
use crate::rng::GaussianStream;
use crate::trajectory::TrajectoryRecord;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "SPECLAB_THREADS";

/// Worker count: `SPECLAB_THREADS` when set to a positive integer, else the
/// available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on a pool of [`thread_count`] workers, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
    {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// Spectra and theorem-condition report of a configuration.
#[derive(Debug, Clone)]
pub struct SpectraReport {
    /// Population spectra.
    pub profile: SpectralProfile,
    /// Condition checks of every theorem variant.
    pub conditions: Vec<TheoremConditions>,
}

/// Computes the spectra of the configured data model.
pub fn spectra(config: &ExperimentConfig) -> Result<SpectraReport> {
    let profile = population_spectra(&config.spec()?)?;
    let conditions = TheoremKind::ALL
        .iter()
        .map(|&t| check_conditions(&profile, t))
        .collect();
    Ok(SpectraReport {
        profile,
        conditions,
    })
}

impl SpectraReport {
    /// Human-readable table.
    pub fn table(&self) -> String {
        let p = &self.profile;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>3} {:>5} {:>10} {:>10} {:>10} {:>10}",
            "c", "user", "prior", "s_yx", "s_xx", "ratio"
        );
        for c in 0..p.k {
            let _ = writeln!(
                out,
                "{:>3} {:>5} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                c + 1,
                p.user_index[c] + 1,
                p.priors[c],
                p.s_yx[c],
                p.s_xx[c],
                p.ratio(c)
            );
        }
        let _ = writeln!(out, "SNR = {}", p.snr);
        let _ = writeln!(out, "t* = {}", p.t_star());
        for cond in &self.conditions {
            let verdict = if cond.satisfied {
                "satisfied"
            } else {
                "not satisfied"
            };
            let _ = writeln!(
                out,
                "{}: {verdict} (margin {:.6})",
                cond.theorem, cond.margin
            );
            for term in &cond.details {
                let _ = writeln!(
                    out,
                    "    [{}] {}: {:.6} {} {:.6} -> {}",
                    term.role,
                    term.name,
                    term.lhs,
                    term.relation,
                    term.rhs,
                    if term.holds { "holds" } else { "fails" }
                );
            }
        }
        out
    }
}

/// Analytic trajectory families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClosedFormAlgo {
    /// Discrete gradient descent.
    Gd,
    /// Gradient flow.
    Gf,
    /// Discrete spectral descent.
    SpecGd,
    /// Spectral flow.
    SpecGf,
    /// Normalised gradient flow, integrated numerically.
    Ngf,
    /// Two-layer spectral descent.
    Bilinear,
    /// Layerwise spectral descent at the configured depth.
    Deep,
}

impl ClosedFormAlgo {
    /// Every family.
    pub const ALL: [ClosedFormAlgo; 7] = [
        ClosedFormAlgo::Gd,
        ClosedFormAlgo::Gf,
        ClosedFormAlgo::SpecGd,
        ClosedFormAlgo::SpecGf,
        ClosedFormAlgo::Ngf,
        ClosedFormAlgo::Bilinear,
        ClosedFormAlgo::Deep,
    ];

    /// Tag used on the command line and in CSV files.
    pub fn tag(self) -> &'static str {
        match self {
            ClosedFormAlgo::Gd => "gd",
            ClosedFormAlgo::Gf => "gf",
            ClosedFormAlgo::SpecGd => "specgd",
            ClosedFormAlgo::SpecGf => "specgf",
            ClosedFormAlgo::Ngf => "ngf",
            ClosedFormAlgo::Bilinear => "bilinear",
            ClosedFormAlgo::Deep => "deep",
        }
    }

    /// True for step-indexed families.
    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            ClosedFormAlgo::Gd
                | ClosedFormAlgo::SpecGd
                | ClosedFormAlgo::Bilinear
                | ClosedFormAlgo::Deep
        )
    }

    /// Parses a comma-separated list; an empty string is the empty set.
    pub fn parse_list(text: &str) -> Result<Vec<ClosedFormAlgo>> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for ClosedFormAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClosedFormAlgo::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::Config {
                line: None,
                key: Some("algos".into()),
                msg: format!(
                    "unknown closed-form algorithm `{s}`, expected one of {}",
                    ClosedFormAlgo::ALL.map(|a| a.tag()).join(", ")
                ),
            })
    }
}

/// Analytic trajectories and the depth gaps that accompany layered ones.
#[derive(Debug, Clone, Default)]
pub struct ClosedFormOutput {
    /// `(run_id, record)` pairs in request order.
    pub records: Vec<(String, TrajectoryRecord)>,
    /// `(depth, ΔT)` pairs, present when a layered family was requested.
    pub gaps: Vec<(usize, f64)>,
    /// Advisory messages.
    pub warnings: Vec<String>,
}

fn eta_for(config: &ExperimentConfig, rule: Rule, algo: ClosedFormAlgo) -> Result<f64> {
    config
        .optimizers
        .iter()
        .find(|o| o.rule == rule)
        .map(|o| o.eta)
        .ok_or_else(|| Error::Config {
            line: None,
            key: Some("optimizer".into()),
            msg: format!(
                "closed form `{}` takes its step size from an [[optimizer]] with rule = \"{}\"",
                algo.tag(),
                rule.tag()
            ),
        })
}

fn step_grid(grid: &[f64]) -> Vec<usize> {
    let mut steps: Vec<usize> = grid.iter().map(|t| t.round() as usize).collect();
    steps.dedup();
    steps
}

fn linear_record(
    profile: &SpectralProfile,
    algo: &str,
    times: Vec<f64>,
    alpha: Vec<Vec<f64>>,
) -> TrajectoryRecord {
    let grad_norm = alpha
        .iter()
        .map(|a| {
            a.iter()
                .enumerate()
                .map(|(c, x)| (profile.s_yx[c] - profile.s_xx[c] * x).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut rec = TrajectoryRecord::new(algo, profile.user_index.clone());
    rec.offdiag = Some(vec![0.0; times.len()]);
    rec.grad_norm = Some(grad_norm);
    rec.times = times;
    rec.alpha = alpha;
    rec
}

/// Evaluates the requested analytic trajectories.
///
/// Discrete families round the grid to whole steps; flows read it as
/// continuous time. Without a grid, discrete families use every
/// `record_every`-th step up to `steps` and flows use `η·t` on the same
/// steps, with `η` from the first optimizer table.
pub fn closed_form(
    config: &ExperimentConfig,
    algos: &[ClosedFormAlgo],
    t_grid: Option<&[f64]>,
) -> Result<ClosedFormOutput> {
    let profile = population_spectra(&config.spec()?)?;
    let every = config.record_every();
    let default_steps: Vec<f64> = (0..=config.run.steps)
        .filter(|t| t % every == 0 || *t == config.run.steps)
        .map(|t| t as f64)
        .collect();
    let parsed_grid = config
        .run
        .t_grid
        .as_deref()
        .map(super::config::parse_t_grid)
        .transpose()?;
    let grid: Option<Vec<f64>> = t_grid.map(<[f64]>::to_vec).or(parsed_grid);
    let flow_grid = || -> Vec<f64> {
        grid.clone().unwrap_or_else(|| {
            let h = config.optimizers.first().map_or_else(
                || {
                    1.25 * profile.ratios().into_iter().fold(0.0, f64::max)
                        / config.run.steps.max(1) as f64
                },
                |o| o.eta,
            );
            default_steps.iter().map(|t| t * h).collect()
        })
    };
    let discrete_grid = || step_grid(grid.as_deref().unwrap_or(&default_steps));
    let mut out = ClosedFormOutput::default();
    let mut gap_depths = Vec::new();
    for &algo in algos {
        let id = format!("{}-{}", config.name, algo.tag());
        let rec = match algo {
            ClosedFormAlgo::Gd | ClosedFormAlgo::SpecGd => {
                let rule = if algo == ClosedFormAlgo::Gd {
                    Rule::Gd
                } else {
                    Rule::SpecGd
                };
                let eta = eta_for(config, rule, algo)?;
                let steps = discrete_grid();
                let alpha = steps
                    .iter()
                    .map(|&t| {
                        if algo == ClosedFormAlgo::Gd {
                            gd_discrete(&profile, eta, t)
                        } else {
                            specgd_discrete(&profile, eta, t)
                        }
                    })
                    .collect::<Result<_>>()?;
                linear_record(
                    &profile,
                    algo.tag(),
                    steps.iter().map(|&t| t as f64).collect(),
                    alpha,
                )
            }
            ClosedFormAlgo::Gf | ClosedFormAlgo::SpecGf => {
                let times = flow_grid();
                let alpha = times
                    .iter()
                    .map(|&t| {
                        if algo == ClosedFormAlgo::Gf {
                            gf(&profile, t)
                        } else {
                            specgf(&profile, t)
                        }
                    })
                    .collect();
                linear_record(&profile, algo.tag(), times, alpha)
            }
            ClosedFormAlgo::Ngf => {
                let times = flow_grid();
                let r = ngf_integrate(&profile, &times, default_ngf_dt(&profile))?;
                linear_record(&profile, algo.tag(), r.times, r.alpha)
            }
            ClosedFormAlgo::Bilinear | ClosedFormAlgo::Deep => {
                let init = layered_init(config, algo)?;
                let eta = eta_for(config, Rule::SpecGd, algo)?;
                out.warnings.extend(init.warnings(&profile, eta));
                gap_depths.push(init.depth);
                let steps = discrete_grid();
                let mut rec = TrajectoryRecord::new(algo.tag(), profile.user_index.clone());
                let mut layers = Vec::with_capacity(steps.len());
                for &t in &steps {
                    let rows = deep_specgd(&profile, &init, eta, t)?;
                    rec.alpha.push(
                        (0..profile.k)
                            .map(|c| rows.iter().map(|r| r[c]).product())
                            .collect(),
                    );
                    layers.push(rows);
                }
                rec.times = steps.iter().map(|&t| t as f64).collect();
                rec.layer_alpha = Some(layers);
                rec
            }
        };
        out.records.push((id, rec));
    }
    if let Some(&max_depth) = gap_depths.iter().max() {
        out.gaps = (1..=max_depth.max(6))
            .map(|l| Ok((l, saturation_gap(&profile, l)?)))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

fn layered_init(config: &ExperimentConfig, algo: ClosedFormAlgo) -> Result<DeepInitSpec> {
    let init = config.model.deep_init()?.ok_or_else(|| Error::Config {
        line: None,
        key: Some("kind".into()),
        msg: format!(
            "closed form `{}` needs [model] kind = \"bilinear\" or \"deep\"",
            algo.tag()
        ),
    })?;
    if algo == ClosedFormAlgo::Bilinear && init.depth != 2 {
        return Err(Error::Config {
            line: None,
            key: Some("depth".into()),
            msg: format!(
                "closed form `bilinear` needs depth 2, the model has depth {}",
                init.depth
            ),
        });
    }
    Ok(init)
}

/// A finished simulation.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Run metadata.
    pub manifest: RunManifest,
    /// Recorded trajectory and metrics.
    pub record: TrajectoryRecord,
}

/// `name-rule-seed-hash8`, with the hash over the configuration, the
/// optimizer index and the seed.
pub fn run_id(config: &ExperimentConfig, optimizer_index: usize, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(config.to_toml().as_bytes());
    h.update((optimizer_index as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let hash: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!(
        "{}-{}-{}-{}",
        config.name,
        config.optimizers[optimizer_index].rule.tag(),
        seed,
        hash
    )
}

/// Data model of one seed: the class means follow `mean_seed + seed`.
pub fn seeded_spec(spec: &DataModelSpec, seed: u64) -> DataModelSpec {
    DataModelSpec {
        mean_seed: spec.mean_seed.wrapping_add(seed),
        ..spec.clone()
    }
}

/// Everything a run needs that depends on the seed but not on the optimizer.
pub struct RunSetup {
    /// Population spectra of the seeded data model.
    pub profile: SpectralProfile,
    /// Gradient source.
    pub provider: GradientProvider,
    /// Batch used for per-class metrics of finite runs.
    pub eval_batch: Option<SampleBatch>,
    /// Loss of the metrics.
    pub loss: LossKind,
    /// Initial state.
    pub init: OptimizerState,
    /// Per-layer bases of layered models.
    pub layer_bases: Option<crate::optim::LayerBases>,
}

/// Builds the seeded data, provider and initial state of a configuration.
pub fn setup(config: &ExperimentConfig, seed: u64) -> Result<RunSetup> {
    let spec = seeded_spec(&config.spec()?, seed);
    let profile = population_spectra(&spec)?;
    let (provider, eval_batch) = match config.provider.kind {
        ProviderKind::Population => (GradientProvider::population(&profile), None),
        ProviderKind::Finite => {
            let n = config.provider.n.unwrap_or(0);
            let train = sample_stream(&spec, n, seed, "train")?;
            let test = config
                .provider
                .test_n
                .map(|m| sample_stream(&spec, m, seed, "test"))
                .transpose()?;
            let eval = test.unwrap_or_else(|| train.clone());
            let provider = match config.provider.loss {
                LossKind::Sq => GradientProvider::empirical_squared(&train),
                LossKind::Ce => GradientProvider::empirical_cross_entropy(train),
            };
            (provider, Some(eval))
        }
    };
    let (init, layer_bases) = match config.model.deep_init()? {
        Some(deep) => {
            let (state, bases) = deep.build(&profile)?;
            (state, Some(bases))
        }
        None => {
            let (k, d) = (spec.k, spec.d);
            let w = match config.provider.init {
                InitKind::Zero => Matrix::zeros(k, d),
                InitKind::Gaussian => {
                    let mut g = GaussianStream::new(seed, "init");
                    let s = 1.0 / (d as f64).sqrt();
                    Matrix::from_fn(k, d, |_, _| s * g.next())
                }
            };
            (OptimizerState::linear(w), None)
        }
    };
    Ok(RunSetup {
        profile,
        provider,
        eval_batch,
        loss: config.provider.loss,
        init,
        layer_bases,
    })
}

impl RunSetup {
    /// Per-class loss and accuracy of `w` in spectral order.
    pub fn evaluate(&self, w: &Matrix) -> Result<ClassEvaluation> {
        let p = &self.profile;
        match &self.eval_batch {
            None => Ok(ClassEvaluation {
                loss: population_class_loss_of(p, w)?.per_class,
                accuracy: None,
            }),
            Some(batch) => {
                if w.shape() != (batch.classes(), batch.x.cols()) {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{}x{}", batch.classes(), batch.x.cols()),
                        found: format!("{:?}", w.shape()),
                    });
                }
                let logits = batch.x.matmul_t(w);
                let user_loss = match self.loss {
                    LossKind::Ce => class_cross_entropy_from_logits(&logits, &batch.labels),
                    LossKind::Sq => class_squared_loss(&logits, batch),
                };
                let acc = accuracy_from_logits(&logits, &batch.labels).per_class;
                Ok(ClassEvaluation {
                    loss: p
                        .user_index
                        .iter()
                        .map(|&u| user_loss[u].unwrap_or(f64::NAN))
                        .collect(),
                    accuracy: Some(p.user_index.iter().map(|&u| acc[u]).collect()),
                })
            }
        }
    }
}

/// Mean `½‖W x − y‖²` of every user class from the `n × k` outputs `X Wᵀ`,
/// `None` when absent.
pub fn class_squared_loss(outputs: &Matrix, batch: &SampleBatch) -> Vec<Option<f64>> {
    let k = batch.classes();
    let residual = outputs - &batch.y;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (i, &c) in batch.labels.iter().enumerate() {
        sums[c] += 0.5 * residual.row(i).iter().map(|r| r * r).sum::<f64>();
        counts[c] += 1;
    }
    (0..k)
        .map(|c| (counts[c] > 0).then(|| sums[c] / counts[c] as f64))
        .collect()
}

/// Runs optimizer `index` of `config` with `seed`.
pub fn simulate_one(config: &ExperimentConfig, index: usize, seed: u64) -> Result<RunResult> {
    let opt = config.optimizers.get(index).ok_or_else(|| Error::Config {
        line: None,
        key: Some("optimizer".into()),
        msg: format!("no optimizer table with index {index}"),
    })?;
    let start = Instant::now();
    let s = setup(config, seed)?;
    let mut warnings = Vec::new();
    if let Some(deep) = config.model.deep_init()? {
        warnings.extend(deep.warnings(&s.profile, opt.eta));
    }
    let options = RunOptions {
        steps: config.run.steps,
        stop_grad_norm: config.run.stop_grad_norm,
        record_every: config.record_every(),
    };
    let eval = |w: &Matrix| s.evaluate(w);
    let recording = Recording {
        profile: Some(&s.profile),
        layer_bases: s.layer_bases.as_ref(),
        evaluator: Some(&eval),
    };
    let outcome = run(opt, &s.provider, &s.init, &options, recording)?;
    Ok(RunResult {
        manifest: RunManifest {
            run_id: run_id(config, index, seed),
            name: config.name.clone(),
            algo: opt.rule.tag().into(),
            seed,
            optimizer_index: index,
            steps_taken: outcome.steps_taken,
            stopped_early: outcome.stopped_early,
            warnings,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_s: start.elapsed().as_secs_f64(),
            config: config.to_toml(),
        },
        record: outcome.record,
    })
}

/// Runs every `(optimizer, seed)` pair in parallel; results are ordered by
/// optimizer, then seed.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let jobs: Vec<(usize, u64)> = (0..config.optimizers.len())
        .flat_map(|i| config.run.seeds.iter().map(move |&s| (i, s)))
        .collect();
    par_map(&jobs, |&(i, seed)| simulate_one(config, i, seed))
        .into_iter()
        .collect()
}

/// Writes `trajectory.csv`, `losses.csv` and one manifest per run into `dir`.
pub fn write_simulation(dir: &std::path::Path, results: &[RunResult]) -> Result<()> {
    let runs: Vec<(String, &TrajectoryRecord)> = results
        .iter()
        .map(|r| (r.manifest.run_id.clone(), &r.record))
        .collect();
    super::io::write_trajectory(&dir.join("trajectory.csv"), &runs)?;
    super::io::write_losses(&dir.join("losses.csv"), &runs)?;
    for r in results {
        super::io::write_manifest(
            &dir.join("manifests")
                .join(format!("{}.json", r.manifest.run_id)),
            &r.manifest,
        )?;
    }
    Ok(())
}

/// Balanced and worst-class summary of one run in `losses.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Run id.
    pub run_id: String,
    /// Rule tag.
    pub algo: String,
    /// Last recorded step or time.
    pub final_step: f64,
    /// Mean per-class loss at the last record.
    pub final_balanced_loss: f64,
    /// Largest per-class loss at the last record.
    pub final_worst_loss: f64,
    /// Best balanced accuracy over all records.
    pub best_balanced_accuracy: Option<f64>,
    /// Best worst-class accuracy over all records.
    pub best_worst_accuracy: Option<f64>,
}

/// Aggregates loss rows per run, in order of first appearance.
pub fn report(rows: &[LossRow]) -> Vec<RunSummary> {
    let mut ids: Vec<&str> = Vec::new();
    for r in rows {
        if !ids.contains(&r.run_id.as_str()) {
            ids.push(&r.run_id);
        }
    }
    ids.into_iter()
        .map(|id| {
            let mine: Vec<&LossRow> = rows.iter().filter(|r| r.run_id == id).collect();
            let mut times: Vec<f64> = mine.iter().map(|r| r.step_or_time).collect();
            times.dedup();
            let at = |t: f64| mine.iter().filter(move |r| r.step_or_time == t);
            let last = *times.last().expect("run has rows");
            let final_losses: Vec<f64> = at(last).filter_map(|r| r.loss).collect();
            let mut best_bal: Option<f64> = None;
            let mut best_worst: Option<f64> = None;
            for &t in &times {
                let acc: Vec<f64> = at(t).filter_map(|r| r.accuracy).collect();
                if acc.is_empty() {
                    continue;
                }
                let bal = acc.iter().sum::<f64>() / acc.len() as f64;
                let worst = acc.iter().copied().fold(f64::INFINITY, f64::min);
                best_bal = Some(best_bal.map_or(bal, |b| b.max(bal)));
                best_worst = Some(best_worst.map_or(worst, |b| b.max(worst)));
            }
            RunSummary {
                run_id: id.to_string(),
                algo: mine[0].algo.clone(),
                final_step: last,
                final_balanced_loss: final_losses.iter().sum::<f64>()
                    / final_losses.len().max(1) as f64,
                final_worst_loss: final_losses
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max),
                best_balanced_accuracy: best_bal,
                best_worst_accuracy: best_worst,
            }
        })
        .collect()
}
