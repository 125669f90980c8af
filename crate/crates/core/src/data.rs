//! Gaussian-mixture class-imbalance data model.
//!
//! Inputs are drawn as `x | y ~ N(μ_y, σ² I_d)` with class priors `p_c` and
//! class means of norm `μ`. When the means are orthogonal the population
//! moment matrices share singular bases, and their spectra have the closed
//! forms `s_yx = μ p_c` and `s_xx = μ² p_c + σ²` (padded with `σ²` beyond
//! `k`). [`SpectralProfile`] stores those spectra together with the bases.

use crate::error::{Error, Result};
use crate::linalg::{extend_orthonormal, push_orthonormal, svd, symmetric_eigen, Matrix};
use crate::rng::GaussianStream;
use serde::{Deserialize, Serialize};

/// Tolerance on the sum of the priors.
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-12;

/// How class priors are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorScheme {
    /// Priors given verbatim.
    Explicit(Vec<f64>),
    /// `majority_count` classes with `ratio` times the prior of the others.
    Step {
        k: usize,
        ratio: f64,
        majority_count: usize,
    },
    /// Heavy-tailed priors `p_c ∝ 1/c`.
    Zipf { k: usize },
}

/// Materialises a prior vector, validating the scheme.
pub fn make_priors(scheme: &PriorScheme) -> Result<Vec<f64>> {
    match scheme {
        PriorScheme::Explicit(p) => {
            validate_priors(p)?;
            Ok(p.clone())
        }
        &PriorScheme::Step {
            k,
            ratio,
            majority_count,
        } => {
            if k == 0 || majority_count == 0 || majority_count >= k {
                return Err(Error::InvalidScheme(format!(
                    "step scheme needs 0 < majority_count < k, got k={k}, majority_count={majority_count}"
                )));
            }
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(Error::InvalidScheme(format!(
                    "step ratio must be positive, got {ratio}"
                )));
            }
            let minority = 1.0 / (majority_count as f64 * ratio + (k - majority_count) as f64);
            Ok((0..k)
                .map(|c| {
                    if c < majority_count {
                        ratio * minority
                    } else {
                        minority
                    }
                })
                .collect())
        }
        &PriorScheme::Zipf { k } => {
            if k == 0 {
                return Err(Error::InvalidScheme("zipf scheme needs k > 0".into()));
            }
            let h: f64 = (1..=k).map(|c| 1.0 / c as f64).sum();
            Ok((1..=k).map(|c| 1.0 / (c as f64 * h)).collect())
        }
    }
}

fn validate_priors(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidScheme("prior list is empty".into()));
    }
    if let Some(bad) = p.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidScheme(format!(
            "priors must be strictly positive, found {bad}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
        return Err(Error::InvalidScheme(format!(
            "priors must sum to 1 (within {PRIOR_SUM_TOLERANCE:e}), they sum to {sum}"
        )));
    }
    Ok(())
}

/// Construction of the class means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// Columns of a seeded orthonormal frame, scaled to norm `μ`.
    #[default]
    ExactOrthonormal,
    /// Independent Gaussian directions normalised to norm `μ`, not orthogonalised.
    NormalizedGaussian,
}

/// How labels are drawn when sampling a finite batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSampling {
    /// Independent draws from the priors.
    #[default]
    Iid,
    /// Class counts fixed by largest remainder of `n p_c`, at least one per class.
    Stratified,
}

/// Parameters of the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataModelSpec {
    /// Number of classes.
    pub k: usize,
    /// Ambient dimension, at least `k`.
    pub d: usize,
    /// Norm of every class mean.
    pub mu: f64,
    /// Noise variance.
    pub sigma2: f64,
    /// Class priors in user order.
    pub priors: Vec<f64>,
    /// Seed of the class-mean stream.
    #[serde(default)]
    pub mean_seed: u64,
    /// Construction of the class means.
    #[serde(default)]
    pub mean_mode: MeanMode,
    /// Label sampling for finite batches.
    #[serde(default)]
    pub label_sampling: LabelSampling,
}

/// Unit mean directions and an orthonormal frame adapted to them.
#[derive(Debug, Clone)]
pub struct MeanFrame {
    /// `d × k`, column `c` is the unit direction of class `c` (user order).
    pub directions: Matrix,
    /// `d × d` orthonormal, its first `k` columns span the directions in order.
    pub basis: Matrix,
}

impl DataModelSpec {
    /// Checks every invariant of the description.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::spec("data model", "k must be at least 1"));
        }
        if self.d < self.k {
            return Err(Error::spec(
                "data model",
                format!("d >= k is required, got d={} and k={}", self.d, self.k),
            ));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::spec(
                "data model",
                format!("mu must be positive, got {}", self.mu),
            ));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::spec(
                "data model",
                format!("sigma2 must be positive, got {}", self.sigma2),
            ));
        }
        if self.priors.len() != self.k {
            return Err(Error::spec(
                "data model",
                format!("expected {} priors, got {}", self.k, self.priors.len()),
            ));
        }
        validate_priors(&self.priors).map_err(|e| Error::spec("data model", e.to_string()))
    }

    /// Signal-to-noise ratio `μ² / σ²`.
    pub fn snr(&self) -> f64 {
        self.mu * self.mu / self.sigma2
    }

    /// Mean directions and adapted frame, deterministic in `mean_seed`.
    pub fn mean_frame(&self) -> Result<MeanFrame> {
        self.validate()?;
        let (k, d) = (self.k, self.d);
        let mut g = GaussianStream::new(self.mean_seed, "class-means");
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
        let directions = match self.mean_mode {
            MeanMode::ExactOrthonormal => {
                extend_orthonormal(&mut basis, d, d, &mut g);
                Matrix::from_columns(&basis[..k])?
            }
            MeanMode::NormalizedGaussian => {
                let dirs: Vec<Vec<f64>> = (0..k)
                    .map(|_| {
                        let v: Vec<f64> = (0..d).map(|_| g.next()).collect();
                        let n = crate::linalg::vec_norm(&v);
                        v.into_iter().map(|x| x / n).collect()
                    })
                    .collect();
                for dir in &dirs {
                    if !push_orthonormal(&mut basis, dir.clone()) {
                        return Err(Error::spec(
                            "data model",
                            "sampled class means are dependent",
                        ));
                    }
                }
                extend_orthonormal(&mut basis, d, d, &mut g);
                Matrix::from_columns(&dirs)?
            }
        };
        Ok(MeanFrame {
            directions,
            basis: Matrix::from_columns(&basis)?,
        })
    }

    /// `d × k` matrix of class means, column `c` has norm `μ`.
    pub fn class_means(&self) -> Result<Matrix> {
        Ok(self.mean_frame()?.directions.scale(self.mu))
    }

    /// Exact population moments `(Σ_xx, Σ_yx)` of the mixture.
    pub fn population_moments(&self) -> Result<(Matrix, Matrix)> {
        let means = self.class_means()?;
        let (k, d) = (self.k, self.d);
        let mut sxx = Matrix::identity(d).scale(self.sigma2);
        for c in 0..k {
            let m = means.column(c);
            for i in 0..d {
                for j in 0..d {
                    sxx[(i, j)] += self.priors[c] * m[i] * m[j];
                }
            }
        }
        let syx = Matrix::from_fn(k, d, |c, j| self.priors[c] * means[(j, c)]);
        Ok((sxx, syx))
    }
}

/// Joint spectra of the population moments and their shared bases.
///
/// Classes are indexed spectrally: index 0 has the largest prior. The
/// `user_index` table maps a spectral index back to the user's class label.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    /// Number of classes.
    pub k: usize,
    /// Ambient dimension.
    pub d: usize,
    /// Mean norm.
    pub mu: f64,
    /// Noise variance.
    pub sigma2: f64,
    /// Priors sorted in non-increasing order.
    pub priors: Vec<f64>,
    /// `user_index[j]` is the user class at spectral position `j`.
    pub user_index: Vec<usize>,
    /// Singular values of `Σ_yx`, length `k`.
    pub s_yx: Vec<f64>,
    /// Eigenvalues of `Σ_xx`, length `d`.
    pub s_xx: Vec<f64>,
    /// `k × k` left basis.
    pub u: Matrix,
    /// `d × d` right basis.
    pub v: Matrix,
    /// `μ² / σ²`.
    pub snr: f64,
}

/// Builds the joint spectra of a data model.
///
/// Priors are sorted in non-increasing order with a stable sort so that
/// spectral index equals class rank; the permutation is kept in
/// [`SpectralProfile::user_index`].
pub fn population_spectra(spec: &DataModelSpec) -> Result<SpectralProfile> {
    let frame = spec.mean_frame()?;
    let (k, d) = (spec.k, spec.d);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| spec.priors[b].total_cmp(&spec.priors[a]));
    let priors: Vec<f64> = order.iter().map(|&c| spec.priors[c]).collect();
    let s_yx = priors.iter().map(|p| spec.mu * p).collect();
    let s_xx = (0..d)
        .map(|j| {
            if j < k {
                spec.mu * spec.mu * priors[j] + spec.sigma2
            } else {
                spec.sigma2
            }
        })
        .collect();
    let mut u = Matrix::zeros(k, k);
    for (j, &c) in order.iter().enumerate() {
        u[(c, j)] = 1.0;
    }
    let columns: Vec<usize> = order.iter().copied().chain(k..d).collect();
    Ok(SpectralProfile {
        k,
        d,
        mu: spec.mu,
        sigma2: spec.sigma2,
        priors,
        user_index: order,
        s_yx,
        s_xx,
        u,
        v: frame.basis.select_columns(&columns),
        snr: spec.snr(),
    })
}

impl SpectralProfile {
    /// Terminal coefficient `s_yx[c] / s_xx[c]` of component `c`.
    pub fn ratio(&self, c: usize) -> f64 {
        self.s_yx[c] / self.s_xx[c]
    }

    /// All terminal coefficients.
    pub fn ratios(&self) -> Vec<f64> {
        (0..self.k).map(|c| self.ratio(c)).collect()
    }

    /// Minority saturation time of the spectral flow, the smallest ratio.
    pub fn t_star(&self) -> f64 {
        self.ratios().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Spectral index of the minority class (smallest prior, lowest index on ties).
    pub fn minority(&self) -> usize {
        let min = self.priors.iter().copied().fold(f64::INFINITY, f64::min);
        self.priors.iter().position(|&p| p == min).unwrap_or(0)
    }

    /// Spectral index of the majority class.
    pub fn majority(&self) -> usize {
        0
    }

    /// Spectral index of user class `c`.
    pub fn spectral_of_user(&self, c: usize) -> usize {
        self.user_index.iter().position(|&u| u == c).unwrap_or(c)
    }

    /// `U diag(s_yx) Vᵀ`.
    pub fn sigma_yx(&self) -> Matrix {
        self.compose(&self.s_yx)
    }

    /// `V diag(s_xx) Vᵀ`.
    pub fn sigma_xx(&self) -> Matrix {
        let d = self.d;
        let scaled = Matrix::from_fn(d, d, |i, j| self.v[(i, j)] * self.s_xx[j]);
        scaled.matmul_t(&self.v)
    }

    /// `U diag(alpha) Vᵀ`, the iterate with the given diagonal coefficients.
    pub fn compose(&self, alpha: &[f64]) -> Matrix {
        let core = Matrix::diag_rect(self.k, self.d, alpha);
        self.u.matmul(&core).matmul_t(&self.v)
    }

    /// Population minimiser `U diag(ratio) Vᵀ`.
    pub fn terminal(&self) -> Matrix {
        self.compose(&self.ratios())
    }

    /// `Uᵀ W V`.
    pub fn project(&self, w: &Matrix) -> Matrix {
        self.u.t_matmul(w).matmul(&self.v)
    }

    /// Diagonal of `Uᵀ W V`.
    pub fn alpha(&self, w: &Matrix) -> Vec<f64> {
        self.project(w).diagonal()
    }
}

/// A finite batch drawn from the mixture.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// `n × d` inputs.
    pub x: Matrix,
    /// `n × k` one-hot labels.
    pub y: Matrix,
    /// Class of every row (user order).
    pub labels: Vec<usize>,
}

impl SampleBatch {
    /// Number of samples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: batches hold at least one sample.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of classes.
    pub fn classes(&self) -> usize {
        self.y.cols()
    }
}

/// Draws `n` training samples, deterministic in `seed`.
pub fn sample(spec: &DataModelSpec, n: usize, seed: u64) -> Result<SampleBatch> {
    sample_stream(spec, n, seed, "train")
}

/// Draws `n` samples from the stream tagged `tag`, so that train and test
/// batches with one seed are independent.
pub fn sample_stream(spec: &DataModelSpec, n: usize, seed: u64, tag: &str) -> Result<SampleBatch> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Dimension("a batch needs at least one sample".into()));
    }
    let means = spec.class_means()?;
    let (k, d) = (spec.k, spec.d);
    let mut label_rng = GaussianStream::new(seed, &format!("{tag}-labels"));
    let labels = match spec.label_sampling {
        LabelSampling::Iid => (0..n)
            .map(|_| label_rng.categorical(&spec.priors))
            .collect(),
        LabelSampling::Stratified => {
            let counts = stratified_counts(&spec.priors, n)?;
            let mut labels: Vec<usize> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &m)| std::iter::repeat_n(c, m))
                .collect();
            for i in (1..labels.len()).rev() {
                let j = (label_rng.uniform() * (i + 1) as f64) as usize;
                labels.swap(i, j.min(i));
            }
            labels
        }
    };
    let mut noise = GaussianStream::new(seed, &format!("{tag}-noise"));
    let sigma = spec.sigma2.sqrt();
    let mut x = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, k);
    for (i, &c) in labels.iter().enumerate() {
        y[(i, c)] = 1.0;
        for j in 0..d {
            x[(i, j)] = means[(j, c)] + sigma * noise.next();
        }
    }
    Ok(SampleBatch { x, y, labels })
}

/// Per-class counts summing to `n` by largest remainder, each at least one.
pub fn stratified_counts(priors: &[f64], n: usize) -> Result<Vec<usize>> {
    let k = priors.len();
    if n < k {
        return Err(Error::spec(
            "label sampling",
            format!("stratified sampling needs n >= k, got n={n}, k={k}"),
        ));
    }
    let mut counts: Vec<usize> = priors
        .iter()
        .map(|p| ((p * n as f64).floor() as usize).max(1))
        .collect();
    while counts.iter().sum::<usize>() > n {
        let c = (0..k)
            .filter(|&c| counts[c] > 1)
            .max_by(|&a, &b| {
                let ea = counts[a] as f64 - priors[a] * n as f64;
                let eb = counts[b] as f64 - priors[b] * n as f64;
                ea.total_cmp(&eb).then(b.cmp(&a))
            })
            .expect("n >= k leaves a class to shrink");
        counts[c] -= 1;
    }
    while counts.iter().sum::<usize>() < n {
        let c = (0..k)
            .max_by(|&a, &b| {
                let ra = priors[a] * n as f64 - counts[a] as f64;
                let rb = priors[b] * n as f64 - counts[b] as f64;
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .expect("at least one class");
        counts[c] += 1;
    }
    Ok(counts)
}

/// Empirical moments `((1/n) XᵀX, (1/n) YᵀX)`.
pub fn empirical_moments(batch: &SampleBatch) -> (Matrix, Matrix) {
    let inv = 1.0 / batch.len() as f64;
    (
        batch.x.t_matmul(&batch.x).scale(inv),
        batch.y.t_matmul(&batch.x).scale(inv),
    )
}

/// Size of the off-diagonal remainder of `Σ_xx` in the bases of `Σ_yx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointnessReport {
    /// `‖B‖_F`.
    pub residual_norm: f64,
    /// `‖Σ_xx‖_F`.
    pub sigma_xx_norm: f64,
    /// `‖B‖_F / ‖Σ_xx‖_F`.
    pub ratio: f64,
}

/// Measures how far a pair of moments is from sharing singular bases.
///
/// `V` is built from the right singular vectors of `Σ_yx`, completed on the
/// orthogonal complement by the eigenvectors of `Σ_xx` compressed there, and
/// `B` is `Vᵀ Σ_xx V` with its diagonal removed.
pub fn jointness_residual(sigma_xx: &Matrix, sigma_yx: &Matrix) -> Result<JointnessReport> {
    let d = sigma_xx.rows();
    if sigma_xx.cols() != d || sigma_yx.cols() != d {
        return Err(Error::ShapeMismatch {
            expected: format!("Σ_xx d×d and Σ_yx k×d with d = {d}"),
            found: format!(
                "Σ_xx {}x{}, Σ_yx {}x{}",
                sigma_xx.rows(),
                sigma_xx.cols(),
                sigma_yx.rows(),
                sigma_yx.cols()
            ),
        });
    }
    let range = svd(sigma_yx)?.v;
    let r = range.cols();
    let mut basis: Vec<Vec<f64>> = (0..r).map(|j| range.column(j)).collect();
    for i in 0..d {
        if basis.len() == d {
            break;
        }
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        push_orthonormal(&mut basis, e);
    }
    let mut v = Matrix::from_columns(&basis)?;
    if r < d {
        let complement = v.select_columns(&(r..d).collect::<Vec<_>>());
        let compressed = complement.t_matmul(sigma_xx).matmul(&complement);
        let rotated = complement.matmul(&symmetric_eigen(&compressed)?.vectors);
        for j in 0..d - r {
            v.set_column(r + j, &rotated.column(j));
        }
    }
    let mut b = v.t_matmul(sigma_xx).matmul(&v);
    for i in 0..d {
        b[(i, i)] = 0.0;
    }
    let residual_norm = b.frobenius();
    let sigma_xx_norm = sigma_xx.frobenius();
    Ok(JointnessReport {
        residual_norm,
        sigma_xx_norm,
        ratio: residual_norm / sigma_xx_norm,
    })
}
