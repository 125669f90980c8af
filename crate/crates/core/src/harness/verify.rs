//! Verification suites. Every check reports a measured value, its
//! tolerance and a verdict.

use super::config::{
    DataSection, ExperimentConfig, InitKind, LossKind, ProviderKind, ProviderSection, RunSection,
    SchemeName,
};
use super::runner::{par_map, seeded_spec, simulate_one, RunResult};
use crate::data::{
    empirical_moments, jointness_residual, population_spectra, sample_stream, DataModelSpec,
    LabelSampling, MeanMode, SpectralProfile,
};
use crate::dynamics::{
    bilinear_specgd, default_ngf_dt, gd_discrete, gf, ngf_integrate, saturation_gap,
    saturation_steps, specgd_discrete, specgf, DeepInitSpec,
};
use crate::error::{Error, Result};
use crate::linalg::{
    newton_schulz, norm, polar_factor, random_orthonormal, svd, Matrix, NormKind, PolarMethod,
};
use crate::metrics::{
    check_conditions, gap_verify, open_grid, population_class_loss, GapOptions, TheoremKind,
};
use crate::optim::{
    run, step, GradientProvider, OptimizerConfig, OptimizerState, Recording, Rule, RunOptions,
};
use crate::rng::GaussianStream;
use crate::trajectory::TrajectoryRecord;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    /// Suite the check belongs to.
    pub suite: &'static str,
    /// What is checked.
    pub name: String,
    /// Measured value.
    pub measured: f64,
    /// Human-readable acceptance region.
    pub tolerance: String,
    /// Verdict.
    pub pass: bool,
}

impl Check {
    /// Passes when `measured < tol`.
    pub fn below(suite: &'static str, name: impl Into<String>, measured: f64, tol: f64) -> Self {
        Check {
            suite,
            name: name.into(),
            measured,
            tolerance: format!("< {tol:e}"),
            pass: measured < tol,
        }
    }

    /// Passes when `measured ≥ floor`.
    pub fn at_least(
        suite: &'static str,
        name: impl Into<String>,
        measured: f64,
        floor: f64,
    ) -> Self {
        Check {
            suite,
            name: name.into(),
            measured,
            tolerance: format!(">= {floor:e}"),
            pass: measured >= floor,
        }
    }

    /// Passes when `measured > floor`.
    pub fn above(suite: &'static str, name: impl Into<String>, measured: f64, floor: f64) -> Self {
        Check {
            suite,
            name: name.into(),
            measured,
            tolerance: format!("> {floor:e}"),
            pass: measured > floor,
        }
    }

    /// Passes when `lo ≤ measured ≤ hi`.
    pub fn within(
        suite: &'static str,
        name: impl Into<String>,
        measured: f64,
        lo: f64,
        hi: f64,
    ) -> Self {
        Check {
            suite,
            name: name.into(),
            measured,
            tolerance: format!("in [{lo}, {hi}]"),
            pass: (lo..=hi).contains(&measured),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: measured {:.6e}, tolerance {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

/// Named groups of checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Momentum and preconditioned rules collapsing to normalised ones.
    Reductions,
    /// Simulations against closed forms, equal rates and the NGF path.
    Dynamics,
    /// Hypotheses and loss gaps of the spectral-advantage theorems.
    Theorems,
    /// Layered spectral descent and the saturation gap.
    Depth,
    /// Joint-diagonalisability residual of finite samples.
    Jointness,
    /// SVD, polar factor and Newton–Schulz accuracy.
    Kernels,
    /// Finite-sample cross-entropy comparison under zipf priors.
    Imbalance,
    /// Every suite.
    All,
}

impl Suite {
    /// Every concrete suite, in run order.
    pub const CONCRETE: [Suite; 7] = [
        Suite::Reductions,
        Suite::Dynamics,
        Suite::Theorems,
        Suite::Depth,
        Suite::Jointness,
        Suite::Kernels,
        Suite::Imbalance,
    ];

    /// Name used on the command line.
    pub fn tag(self) -> &'static str {
        match self {
            Suite::Reductions => "reductions",
            Suite::Dynamics => "dynamics",
            Suite::Theorems => "theorems",
            Suite::Depth => "depth",
            Suite::Jointness => "jointness",
            Suite::Kernels => "kernels",
            Suite::Imbalance => "imbalance",
            Suite::All => "all",
        }
    }

    /// Runs the suite.
    pub fn run(self) -> Result<Vec<Check>> {
        Ok(match self {
            Suite::Reductions => reduction_checks()?,
            Suite::Dynamics => {
                let mut c = dynamics_checks(&gd_discrete)?;
                c.extend(equal_rate_checks()?);
                c.extend(ngf_path_checks()?);
                c
            }
            Suite::Theorems => {
                let mut c = gf_theorem_checks()?;
                c.extend(ngf_theorem_checks()?);
                c.extend(second_pass_checks()?);
                c
            }
            Suite::Depth => depth_checks()?,
            Suite::Jointness => jointness_checks()?,
            Suite::Kernels => kernel_checks()?,
            Suite::Imbalance => imbalance_checks(&ImbalanceOptions::default())?.checks,
            Suite::All => {
                let mut all = Vec::new();
                for s in Suite::CONCRETE {
                    all.extend(s.run()?);
                }
                all
            }
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::CONCRETE
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.tag() == s)
            .ok_or_else(|| Error::Config {
                line: None,
                key: Some("suite".into()),
                msg: format!(
                    "unknown suite `{s}`, expected one of reductions, dynamics, theorems, depth, jointness, kernels, imbalance, all"
                ),
            })
    }
}

fn spec(k: usize, d: usize, mu: f64, sigma2: f64, priors: Vec<f64>) -> DataModelSpec {
    DataModelSpec {
        k,
        d,
        mu,
        sigma2,
        priors,
        mean_seed: 0,
        mean_mode: MeanMode::ExactOrthonormal,
        label_sampling: LabelSampling::Iid,
    }
}

/// Three classes with priors (0.5, 0.3, 0.2), μ = 1, σ² = 0.125, d = 3.
pub fn three_class_spec() -> DataModelSpec {
    spec(3, 3, 1.0, 0.125, vec![0.5, 0.3, 0.2])
}

/// Three classes with priors (0.55, 0.3, 0.15), μ = 1, σ² = 0.125.
pub fn depth_spec(d: usize) -> DataModelSpec {
    spec(3, d, 1.0, 0.125, vec![0.55, 0.3, 0.15])
}

/// Ten classes, one majority with prior 0.865 and nine with 0.015, μ = 1, σ² = 0.25.
pub fn heavy_tail_spec() -> DataModelSpec {
    let mut priors = vec![0.865];
    priors.extend(std::iter::repeat_n(0.015, 9));
    spec(10, 10, 1.0, 0.25, priors)
}

fn profile_of(spec: &DataModelSpec) -> Result<SpectralProfile> {
    population_spectra(spec)
}

/// Population run of a linear model from zero, recorded at every step.
pub fn population_run(
    profile: &SpectralProfile,
    config: &OptimizerConfig,
    steps: usize,
) -> Result<TrajectoryRecord> {
    let provider = GradientProvider::population(profile);
    let init = OptimizerState::linear(Matrix::zeros(profile.k, profile.d));
    let options = RunOptions {
        steps,
        stop_grad_norm: 0.0,
        record_every: 1,
    };
    let recording = Recording {
        profile: Some(profile),
        ..Default::default()
    };
    Ok(run(config, &provider, &init, &options, recording)?.record)
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Shampoo, Adam, Muon and Signum with memory switched off against the
/// rules they collapse to, on seeded sequences of random gradients.
pub fn reduction_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "reductions";
    const SHAPES: [(usize, usize); 8] = [
        (16, 16),
        (16, 9),
        (7, 16),
        (12, 12),
        (5, 3),
        (1, 8),
        (16, 1),
        (2, 2),
    ];
    const STEPS: usize = 50;
    let pairs = [
        ("shampoo->specgd", Rule::Shampoo, Rule::SpecGd),
        ("adam->signgd", Rule::Adam, Rule::SignGd),
        ("muon->specgd", Rule::Muon, Rule::SpecGd),
        ("signum->signgd", Rule::Signum, Rule::SignGd),
    ];
    let mut checks = Vec::new();
    for (name, full, reduced) in pairs {
        let a_cfg = OptimizerConfig::new(full, 0.01).memoryless();
        let b_cfg = OptimizerConfig::new(reduced, 0.01);
        let mut worst: f64 = 0.0;
        for (i, &(m, n)) in SHAPES.iter().enumerate() {
            let mut g = GaussianStream::new(i as u64, "reduction-gradients");
            let mut a = OptimizerState::linear(Matrix::zeros(m, n));
            let mut b = a.clone();
            for _ in 0..STEPS {
                let grad = Matrix::from_fn(m, n, |_, _| g.next());
                a = step(&a_cfg, &a, std::slice::from_ref(&grad))?;
                b = step(&b_cfg, &b, std::slice::from_ref(&grad))?;
                worst = worst.max(a.layers[0].max_abs_diff(&b.layers[0]));
            }
        }
        checks.push(Check::below(SUITE, name, worst, 1e-6));
    }
    Ok(checks)
}

/// Closed form for discrete gradient descent, injectable so that the
/// suite can be exercised with a deliberately wrong oracle.
pub type GdOracle<'a> = &'a dyn Fn(&SpectralProfile, f64, usize) -> Result<Vec<f64>>;

/// GD and SpecGD simulations against their closed forms on the three-class profile.
pub fn dynamics_checks(gd_oracle: GdOracle<'_>) -> Result<Vec<Check>> {
    const SUITE: &str = "dynamics";
    const STEPS: usize = 200;
    let eta = 0.01;
    let p = profile_of(&three_class_spec())?;
    let start = Instant::now();
    let gd = population_run(&p, &OptimizerConfig::new(Rule::Gd, eta), STEPS)?;
    let sgd = population_run(&p, &OptimizerConfig::new(Rule::SpecGd, eta), STEPS)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut gd_dev: f64 = 0.0;
    let mut spec_dev: f64 = 0.0;
    let mut spec_pre_dev: f64 = 0.0;
    let crossings = saturation_steps(&p, eta);
    for t in 0..=STEPS {
        gd_dev = gd_dev.max(max_dev(&gd.alpha[t], &gd_oracle(&p, eta, t)?));
        let exact = specgd_discrete(&p, eta, t)?;
        spec_dev = spec_dev.max(max_dev(&sgd.alpha[t], &exact));
        for c in 0..p.k {
            if (t as f64) <= crossings[c] + 1e-12 {
                spec_pre_dev = spec_pre_dev.max((sgd.alpha[t][c] - exact[c]).abs());
            }
        }
    }
    let off = |r: &TrajectoryRecord| {
        r.offdiag
            .as_ref()
            .map_or(f64::NAN, |o| o.iter().copied().fold(0.0, f64::max))
    };
    Ok(vec![
        Check::below(SUITE, "gd matches closed form, 200 steps", gd_dev, 1e-9),
        Check::below(
            SUITE,
            "specgd matches closed form, 200 steps",
            spec_dev,
            1e-9,
        ),
        Check::below(
            SUITE,
            "specgd matches closed form up to each saturation",
            spec_pre_dev,
            1e-9,
        ),
        Check::below(SUITE, "gd off-diagonal residual", off(&gd), 1e-9),
        Check::below(SUITE, "specgd off-diagonal residual", off(&sgd), 1e-9),
        Check::below(SUITE, "runtime seconds", elapsed, 1.0),
    ])
}

/// Equal-rate growth of SpecGD and its saturation steps on the three-class profile.
pub fn equal_rate_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "dynamics";
    let eta = 0.01;
    let p = profile_of(&three_class_spec())?;
    let rec = population_run(&p, &OptimizerConfig::new(Rule::SpecGd, eta), 120)?;
    let crossings = saturation_steps(&p, eta);
    let mut dev: f64 = 0.0;
    for t in 0..rec.len() - 1 {
        for c in 0..p.k {
            if (t + 1) as f64 <= crossings[c] + 1e-12 {
                dev = dev.max((rec.alpha[t + 1][c] - rec.alpha[t][c] - eta).abs());
            }
        }
    }
    let mut checks = vec![Check::below(
        SUITE,
        "unsaturated increments equal eta",
        dev,
        1e-12,
    )];
    checks.push(Check::below(
        SUITE,
        "c=1 saturation step is 80",
        (crossings[0] - 80.0).abs(),
        1e-9,
    ));
    let windows = [(2, 70.0, 71.0), (3, 61.0, 62.0)];
    for (c, lo, hi) in windows {
        checks.push(Check {
            suite: SUITE,
            name: format!("c={c} saturation step in ({lo}, {hi})"),
            measured: crossings[c - 1],
            tolerance: format!("in ({lo}, {hi})"),
            pass: crossings[c - 1] > lo && crossings[c - 1] < hi,
        });
    }
    for c in 0..p.k {
        let first = (0..rec.len()).find(|&t| rec.alpha[t][c] >= p.ratio(c) - 1e-12);
        let expected = crossings[c].ceil();
        let measured = first.map_or(f64::INFINITY, |t| t as f64);
        checks.push(Check::below(
            SUITE,
            format!("c={} simulated crossing at step {expected}", c + 1),
            (measured - expected).abs(),
            0.5,
        ));
    }
    Ok(checks)
}

/// NGF samples lie on the GF curve in coefficient space.
///
/// Along the gradient flow `1 − α_c/r_c = u^{s_c/s_1}` with
/// `u = 1 − α_1/r_1`, so the curve is known exactly. The check measures the
/// Euclidean distance of every NGF sample to that curve. Expressing `α_c`
/// as a function of `α_1` instead is ill-conditioned near the terminal
/// point, where the curve becomes vertical.
pub fn ngf_path_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "dynamics";
    let p = profile_of(&three_class_spec())?;
    let r: Vec<f64> = p.ratios();
    let curve = |u: f64| -> Vec<f64> {
        (0..p.k)
            .map(|c| r[c] * (1.0 - u.powf(p.s_xx[c] / p.s_xx[0])))
            .collect()
    };
    let path_len = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let grid: Vec<f64> = (0..=400)
        .map(|i| 1.5 * path_len * i as f64 / 400.0)
        .collect();
    let ngf = ngf_integrate(&p, &grid, default_ngf_dt(&p))?;
    let mut dev: f64 = 0.0;
    for a in &ngf.alpha {
        let u0 = (1.0 - a[0] / r[0]).clamp(0.0, 1.0);
        let dist = |u: f64| euclid(a, &curve(u));
        dev = dev.max(golden_min(dist, (u0 - 1e-3).max(0.0), (u0 + 1e-3).min(1.0)));
    }
    let arrived = max_dev(ngf.alpha.last().expect("nonempty grid"), &r);
    Ok(vec![
        Check::below(SUITE, "ngf path coincides with gf path", dev, 1e-4),
        Check::below(SUITE, "ngf reaches the terminal point", arrived, 1e-9),
    ])
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimum of `f` on `[lo, hi]` by golden-section search, including the ends.
fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..80 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if f(x1) < f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    f(0.5 * (a + b)).min(f(lo)).min(f(hi))
}

fn theorem_checks(
    kinds: [TheoremKind; 2],
    suite: &'static str,
) -> Result<(Vec<Check>, SpectralProfile)> {
    let p = profile_of(&heavy_tail_spec())?;
    let grid = open_grid(p.t_star(), 50);
    let mut checks = Vec::new();
    for kind in kinds {
        let cond = check_conditions(&p, kind);
        checks.push(Check {
            suite,
            name: format!("{kind} hypotheses hold"),
            measured: f64::from(u8::from(cond.satisfied)),
            tolerance: "= 1".into(),
            pass: cond.satisfied,
        });
        checks.push(Check::above(
            suite,
            format!("{kind} margin"),
            cond.margin,
            0.0,
        ));
        let points = gap_verify(&p, kind, &grid, GapOptions::default())?;
        let slack = points
            .iter()
            .map(|g| g.gap - g.bound)
            .fold(f64::INFINITY, f64::min);
        let held = points.iter().filter(|g| g.holds).count();
        checks.push(Check::at_least(
            suite,
            format!("{kind} gap minus bound, 50 points"),
            slack,
            -1e-9,
        ));
        checks.push(Check::at_least(
            suite,
            format!("{kind} grid points holding"),
            held as f64,
            50.0,
        ));
    }
    Ok((checks, p))
}

/// Hypotheses and loss gaps of the gradient-flow comparison on the heavy-tail profile.
pub fn gf_theorem_checks() -> Result<Vec<Check>> {
    let start = Instant::now();
    let (mut checks, _) = theorem_checks(
        [TheoremKind::GfMinority, TheoremKind::GfBalanced],
        "theorems",
    )?;
    checks.push(Check::below(
        "theorems",
        "gf comparison runtime seconds",
        start.elapsed().as_secs_f64(),
        1.0,
    ));
    Ok(checks)
}

/// Hypotheses, loss gaps and integrator convergence of the normalised-flow comparison.
pub fn ngf_theorem_checks() -> Result<Vec<Check>> {
    let (mut checks, p) = theorem_checks(
        [TheoremKind::NgfMinority, TheoremKind::NgfBalanced],
        "theorems",
    )?;
    let grid = open_grid(p.t_star(), 50);
    let dt = default_ngf_dt(&p);
    let coarse = ngf_integrate(&p, &grid, dt)?;
    let fine = ngf_integrate(&p, &grid, dt / 2.0)?;
    let shift = coarse
        .alpha
        .iter()
        .zip(&fine.alpha)
        .map(|(a, b)| max_dev(a, b))
        .fold(0.0, f64::max);
    checks.push(Check::below(
        "theorems",
        "ngf shift when halving dt",
        shift,
        1e-8,
    ));
    Ok(checks)
}

/// Simulated GD, SpecGD and NGD at a small step against the analytic flows.
pub fn second_pass_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "theorems";
    let p = profile_of(&heavy_tail_spec())?;
    let t_star = p.t_star();
    let steps = 2000;
    let eta = t_star / steps as f64;
    let grid = open_grid(t_star, 50);
    let ngf = ngf_integrate(&p, &grid, default_ngf_dt(&p))?;
    let mut checks = Vec::new();
    for (rule, name) in [
        (Rule::Gd, "gd vs gf"),
        (Rule::SpecGd, "specgd vs specgf"),
        (Rule::Ngd, "ngd vs ngf"),
    ] {
        let rec = population_run(&p, &OptimizerConfig::new(rule, eta), steps)?;
        let mut dev: f64 = 0.0;
        for (i, &t) in grid.iter().enumerate() {
            let n = (t / eta).round() as usize;
            let sim = population_class_loss(&p, &rec.alpha[n])?;
            let exact = match rule {
                Rule::Gd => gf(&p, t),
                Rule::SpecGd => specgf(&p, t),
                _ => ngf.alpha[i].clone(),
            };
            let exact = population_class_loss(&p, &exact)?;
            dev = dev.max(max_dev(&sim.per_class, &exact.per_class));
        }
        checks.push(Check::below(
            SUITE,
            format!("small-step {name} class losses"),
            dev,
            1e-3,
        ));
    }
    Ok(checks)
}

/// Layered spectral descent against its closed form, saturation values and the depth gap.
pub fn depth_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "depth";
    let eta = 0.05;
    let p = profile_of(&depth_spec(5))?;
    let init = DeepInitSpec {
        depth: 2,
        delta: 10.0,
        inner_width: Some(4),
        basis_seed: 0,
    };
    let (state, bases) = init.build(&p)?;
    let steps = 40;
    let provider = GradientProvider::population(&p);
    let options = RunOptions {
        steps,
        stop_grad_norm: 0.0,
        record_every: 1,
    };
    let recording = Recording {
        profile: Some(&p),
        layer_bases: Some(&bases),
        evaluator: None,
    };
    let rec = run(
        &OptimizerConfig::new(Rule::SpecGd, eta),
        &provider,
        &state,
        &options,
        recording,
    )?
    .record;
    let layers = rec.layer_alpha.as_ref().expect("layer bases were attached");
    let targets: Vec<f64> = p.ratios().iter().map(|r| r.sqrt()).collect();
    let s = init.init_scale();
    let mut full: f64 = 0.0;
    let mut pre: f64 = 0.0;
    for t in 0..=steps {
        let (bottom, top) = bilinear_specgd(&p, &init, eta, t)?;
        for c in 0..p.k {
            let d = (layers[t][0][c] - bottom[c])
                .abs()
                .max((layers[t][1][c] - top[c]).abs());
            full = full.max(d);
            if (t as f64) <= (targets[c] - s) / eta {
                pre = pre.max(d);
            }
        }
    }
    let mut checks = vec![
        Check::below(SUITE, "bilinear matches closed form, 40 steps", full, 1e-6),
        Check::below(
            SUITE,
            "bilinear matches closed form up to each saturation",
            pre,
            1e-6,
        ),
    ];
    for (c, expected) in [0.902671, 0.840168, 0.738549].into_iter().enumerate() {
        checks.push(Check::below(
            SUITE,
            format!("c={} saturation value {expected}", c + 1),
            (targets[c] - expected).abs(),
            1e-6,
        ));
    }
    let gaps: Vec<f64> = (1..=6)
        .map(|l| saturation_gap(&p, l))
        .collect::<Result<_>>()?;
    checks.push(Check::below(
        SUITE,
        "gap L=1 equals 0.493827",
        (gaps[0] - 0.493827).abs(),
        1e-6,
    ));
    checks.push(Check::below(
        SUITE,
        "gap L=2 equals 0.222227",
        (gaps[1] - 0.222227).abs(),
        1e-6,
    ));
    checks.push(Check::below(
        SUITE,
        "gap L=2 equals 2/9",
        (gaps[1] - 2.0 / 9.0).abs(),
        1e-6,
    ));
    let min_drop = gaps
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::above(
        SUITE,
        "gap strictly decreasing for L=1..6",
        min_drop,
        0.0,
    ));
    Ok(checks)
}

/// Jointness residual of 2000-sample moments of the three-class model.
pub fn jointness_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "jointness";
    let base = three_class_spec();
    let mut checks = Vec::new();
    for seed in 0..5u64 {
        let spec = seeded_spec(&base, seed);
        let batch = sample_stream(&spec, 2000, seed, "train")?;
        let (sxx, syx) = empirical_moments(&batch);
        let report = jointness_residual(&sxx, &syx)?;
        checks.push(Check::within(
            SUITE,
            format!("seed {seed} jointness ratio"),
            report.ratio,
            0.003,
            0.03,
        ));
    }
    Ok(checks)
}

fn conditioned(rows: usize, cols: usize, cond: f64, seed: u64) -> Result<Matrix> {
    let r = rows.min(cols);
    let q1 = random_orthonormal(rows, r, seed)?;
    let q2 = random_orthonormal(cols, r, seed.wrapping_add(1 << 32))?;
    let mut g = GaussianStream::new(seed, "conditioned-spectrum");
    let s: Vec<f64> = (0..r)
        .map(|i| match i {
            0 => 1.0,
            1 => 1.0 / cond,
            _ => (-cond.ln() * g.uniform()).exp(),
        })
        .collect();
    Ok(q1.matmul(&Matrix::diag_rect(r, r, &s)).matmul_t(&q2))
}

/// Duality of the polar factor, Newton–Schulz accuracy and SVD reconstruction.
pub fn kernel_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "kernels";
    const SHAPES: [(usize, usize); 7] =
        [(16, 16), (16, 7), (5, 16), (8, 8), (3, 3), (12, 4), (1, 6)];
    let mut duality: f64 = 0.0;
    let mut ns: f64 = 0.0;
    let mut recon: f64 = 0.0;
    for (i, &(m, n)) in SHAPES.iter().enumerate() {
        for rep in 0..4u64 {
            let seed = 100 * i as u64 + rep;
            let mut g = GaussianStream::new(seed, "kernel-input");
            let a = Matrix::from_fn(m, n, |_, _| g.next());
            let p = polar_factor(&a, PolarMethod::ExactSvd)?;
            duality = duality.max((a.inner(&p) - norm(&a, NormKind::Nuclear)?).abs());
            recon = recon.max(svd(&a)?.reconstruct().max_abs_diff(&a));
            let cond = [1.0, 10.0, 50.0, 100.0][rep as usize];
            let b = conditioned(m, n, cond, seed)?;
            let exact = polar_factor(&b, PolarMethod::ExactSvd)?;
            ns = ns.max(newton_schulz(&b, 5)?.output.max_abs_diff(&exact));
        }
    }
    Ok(vec![
        Check::below(SUITE, "polar duality equals nuclear norm", duality, 1e-8),
        Check::below(
            SUITE,
            "newton-schulz(5) vs exact polar, cond <= 100",
            ns,
            1e-3,
        ),
        Check::below(SUITE, "svd reconstruction", recon, 1e-8),
    ])
}

/// Controls of the finite-sample comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceOptions {
    /// Run seeds.
    pub seeds: Vec<u64>,
    /// Step budget of every optimizer.
    pub steps: usize,
    /// Checkpoint period.
    pub record_every: usize,
}

impl Default for ImbalanceOptions {
    fn default() -> Self {
        ImbalanceOptions {
            seeds: (0..5).collect(),
            steps: 10_000,
            record_every: 10,
        }
    }
}

/// Twenty zipf classes in 200 dimensions, 100 cross-entropy training
/// samples and 2000 held-out samples, with NGD, SignGD and SpecGD.
pub fn zipf_ce_config(options: &ImbalanceOptions) -> ExperimentConfig {
    ExperimentConfig {
        name: "zipf-ce".into(),
        data: DataSection {
            k: Some(20),
            d: Some(200),
            mu: 1.0,
            sigma2: 0.01,
            priors: None,
            scheme: Some(SchemeName::Zipf),
            ratio: None,
            majority_count: None,
            mean_seed: 0,
            mean_mode: MeanMode::NormalizedGaussian,
            label_sampling: LabelSampling::Stratified,
        },
        model: Default::default(),
        provider: ProviderSection {
            kind: ProviderKind::Finite,
            n: Some(100),
            loss: LossKind::Ce,
            test_n: Some(2000),
            init: InitKind::Gaussian,
        },
        run: RunSection {
            steps: options.steps,
            record_every: Some(options.record_every),
            stop_grad_norm: 1e-6,
            seeds: options.seeds.clone(),
            output_dir: "out/zipf-ce".into(),
            t_grid: None,
        },
        optimizers: vec![
            OptimizerConfig::new(Rule::Ngd, 0.025),
            OptimizerConfig::new(Rule::SignGd, 0.005),
            OptimizerConfig::new(Rule::SpecGd, 5e-4),
        ],
    }
}

/// Best balanced and worst-class test accuracy over the checkpoints of a run.
pub fn best_accuracies(record: &TrajectoryRecord) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for row in record.accuracy.iter().flatten() {
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        if present.is_empty() {
            continue;
        }
        let bal = present.iter().sum::<f64>() / present.len() as f64;
        let worst = present.iter().copied().fold(f64::INFINITY, f64::min);
        best = (best.0.max(bal), best.1.max(worst));
    }
    best
}

/// Results of the finite-sample comparison.
#[derive(Debug, Clone)]
pub struct ImbalanceOutcome {
    /// Verdicts.
    pub checks: Vec<Check>,
    /// Per seed, SpecGD's best balanced and worst-class accuracy minus the
    /// best of NGD and SignGD.
    pub margins: Vec<(f64, f64)>,
    /// Every run, ordered by optimizer then seed.
    pub runs: Vec<RunResult>,
}

/// Early-stopped SpecGD against the best NGD and SignGD checkpoints, per seed.
pub fn imbalance_checks(options: &ImbalanceOptions) -> Result<ImbalanceOutcome> {
    const SUITE: &str = "imbalance";
    let start = Instant::now();
    let config = zipf_ce_config(options);
    let jobs: Vec<(usize, u64)> = (0..config.optimizers.len())
        .flat_map(|i| options.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs: Vec<RunResult> = par_map(&jobs, |&(i, s)| simulate_one(&config, i, s))
        .into_iter()
        .collect::<Result<_>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    let n_seeds = options.seeds.len();
    let best = |i: usize, s: usize| best_accuracies(&runs[i * n_seeds + s].record);
    let mut wins = 0usize;
    let mut margins = Vec::new();
    for s in 0..n_seeds {
        let (spec_bal, spec_worst) = best(2, s);
        let (ngd_bal, ngd_worst) = best(0, s);
        let (sign_bal, sign_worst) = best(1, s);
        let m = (
            spec_bal - ngd_bal.max(sign_bal),
            spec_worst - ngd_worst.max(sign_worst),
        );
        if m.0 > 0.0 && m.1 > 0.0 {
            wins += 1;
        }
        margins.push(m);
    }
    let majority = (4 * n_seeds).div_ceil(5);
    let checks = vec![
        Check::at_least(
            SUITE,
            format!("seeds where specgd wins on both, of {n_seeds}"),
            wins as f64,
            majority as f64,
        ),
        Check::below(SUITE, "runtime seconds", elapsed, 120.0),
    ];
    Ok(ImbalanceOutcome {
        checks,
        margins,
        runs,
    })
}
