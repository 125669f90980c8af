//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use speclab::data::{population_spectra, DataModelSpec, LabelSampling, MeanMode, SpectralProfile};
use speclab::Matrix;

/// Three classes with priors (0.5, 0.3, 0.2), μ = 1, σ² = 0.125, d = 3.
pub fn three_class_spec() -> DataModelSpec {
    spec(3, 3, 1.0, 0.125, vec![0.5, 0.3, 0.2])
}

/// Three classes with priors (0.55, 0.3, 0.15), μ = 1, σ² = 0.125.
pub fn depth_spec(d: usize) -> DataModelSpec {
    spec(3, d, 1.0, 0.125, vec![0.55, 0.3, 0.15])
}

/// Ten classes, one majority with 0.865 and nine with 0.015, μ = 1, σ² = 0.25.
pub fn heavy_tail_spec() -> DataModelSpec {
    let mut priors = vec![0.865];
    priors.extend(std::iter::repeat_n(0.015, 9));
    spec(10, 10, 1.0, 0.25, priors)
}

pub fn spec(k: usize, d: usize, mu: f64, sigma2: f64, priors: Vec<f64>) -> DataModelSpec {
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

pub fn profile(spec: &DataModelSpec) -> SpectralProfile {
    population_spectra(spec).expect("valid spec")
}

/// Seeded standard normal matrix.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut g = speclab::rng::GaussianStream::new(seed, "test-matrix");
    Matrix::from_fn(rows, cols, |_, _| g.next())
}

/// Seeded matrix `Q₁ diag(s) Q₂ᵀ` with singular values log-uniform in `[1/cond, 1]`.
pub fn conditioned(rows: usize, cols: usize, cond: f64, seed: u64) -> Matrix {
    let r = rows.min(cols);
    let q1 = speclab::linalg::random_orthonormal(rows, r, seed).unwrap();
    let q2 = speclab::linalg::random_orthonormal(cols, r, seed ^ 0x9e37_79b9).unwrap();
    let mut g = speclab::rng::GaussianStream::new(seed, "test-spectrum");
    let s: Vec<f64> = (0..r)
        .map(|i| match i {
            0 => 1.0,
            1 => 1.0 / cond,
            _ => (-(cond.ln()) * g.uniform()).exp(),
        })
        .collect();
    let core = Matrix::from_fn(r, r, |i, j| if i == j { s[i] } else { 0.0 });
    q1.matmul(&core).matmul_t(&q2)
}
