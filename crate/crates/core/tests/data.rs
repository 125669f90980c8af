mod common;

use common::*;
use proptest::prelude::*;
use speclab::data::{
    empirical_moments, jointness_residual, make_priors, population_spectra, sample, sample_stream,
    stratified_counts, LabelSampling, MeanMode, PriorScheme,
};
use speclab::{Error, Matrix};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn prior_schemes() {
    let explicit = make_priors(&PriorScheme::Explicit(vec![0.5, 0.3, 0.2])).unwrap();
    assert_eq!(explicit, vec![0.5, 0.3, 0.2]);
    let zipf = make_priors(&PriorScheme::Zipf { k: 3 }).unwrap();
    assert!(close(&zipf, &[6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0], 1e-15));
    let balanced = make_priors(&PriorScheme::Step {
        k: 2,
        ratio: 1.0,
        majority_count: 1,
    })
    .unwrap();
    assert!(close(&balanced, &[0.5, 0.5], 1e-15));
    let step = make_priors(&PriorScheme::Step {
        k: 5,
        ratio: 20.0,
        majority_count: 2,
    })
    .unwrap();
    assert!((step[0] / step[4] - 20.0).abs() < 1e-12);
    assert!((step.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn invalid_prior_schemes_are_rejected() {
    let bad = [
        PriorScheme::Explicit(vec![0.5, 0.4]),
        PriorScheme::Explicit(vec![1.2, -0.2]),
        PriorScheme::Explicit(vec![]),
        PriorScheme::Step {
            k: 3,
            ratio: 0.0,
            majority_count: 1,
        },
        PriorScheme::Step {
            k: 3,
            ratio: 2.0,
            majority_count: 3,
        },
        PriorScheme::Zipf { k: 0 },
    ];
    for scheme in bad {
        assert!(
            matches!(make_priors(&scheme), Err(Error::InvalidScheme(_))),
            "{scheme:?}"
        );
    }
}

#[test]
fn invalid_data_models_are_rejected() {
    let mut s = three_class_spec();
    s.d = 2;
    assert!(s.validate().is_err());
    let mut s = three_class_spec();
    s.sigma2 = 0.0;
    assert!(s.validate().is_err());
    let mut s = three_class_spec();
    s.priors = vec![0.5, 0.5];
    assert!(s.validate().is_err());
    assert!(population_spectra(&s).unwrap_err().is_config());
}

#[test]
fn three_class_spectra() {
    let p = profile(&three_class_spec());
    assert!(close(&p.s_yx, &[0.5, 0.3, 0.2], 1e-15));
    assert!(close(&p.s_xx, &[0.625, 0.425, 0.325], 1e-15));
    assert!(close(
        &p.ratios(),
        &[0.8, 0.705882352941, 0.615384615385],
        1e-12
    ));
    assert!((p.t_star() - 0.615385).abs() < 1e-6);
    assert_eq!(p.minority(), 2);
}

#[test]
fn single_class_and_padded_spectra() {
    let p = profile(&spec(1, 1, 2.0, 1.0, vec![1.0]));
    assert_eq!(p.s_yx, vec![2.0]);
    assert_eq!(p.s_xx, vec![5.0]);
    let wide = profile(&spec(2, 5, 1.0, 0.5, vec![0.5, 0.5]));
    assert_eq!(wide.s_xx.len(), 5);
    assert!(wide.s_xx[2..].iter().all(|&s| s == 0.5));
}

#[test]
fn noiseless_limit_has_unit_ratios() {
    let p = profile(&spec(3, 4, 1.0, 1e-12, vec![0.6, 0.3, 0.1]));
    assert!(p.ratios().iter().all(|r| (r - 1.0).abs() < 1e-10));
}

#[test]
fn unsorted_priors_are_sorted_with_a_recorded_permutation() {
    let p = profile(&spec(3, 3, 1.0, 0.125, vec![0.2, 0.5, 0.3]));
    assert_eq!(p.priors, vec![0.5, 0.3, 0.2]);
    assert_eq!(p.user_index, vec![1, 2, 0]);
    assert_eq!(p.spectral_of_user(0), 2);
    // The user-order moments are diagonalised by the permuted bases.
    let (sxx, syx) = spec(3, 3, 1.0, 0.125, vec![0.2, 0.5, 0.3])
        .population_moments()
        .unwrap();
    assert!(p.sigma_yx().max_abs_diff(&syx) < 1e-14);
    assert!(p.sigma_xx().max_abs_diff(&sxx) < 1e-14);
}

#[test]
fn exact_orthonormal_means_are_orthogonal_with_norm_mu() {
    let s = spec(4, 7, 1.5, 0.1, vec![0.4, 0.3, 0.2, 0.1]);
    let m = s.class_means().unwrap();
    assert!(
        m.t_matmul(&m)
            .max_abs_diff(&Matrix::identity(4).scale(2.25))
            < 1e-10
    );
    let frame = s.mean_frame().unwrap();
    assert!(
        frame
            .basis
            .t_matmul(&frame.basis)
            .max_abs_diff(&Matrix::identity(7))
            < 1e-12
    );
}

#[test]
fn population_moments_share_bases() {
    for s in [three_class_spec(), heavy_tail_spec(), depth_spec(5)] {
        let (sxx, syx) = s.population_moments().unwrap();
        let p = profile(&s);
        assert!(p.sigma_xx().max_abs_diff(&sxx) < 1e-13);
        assert!(p.sigma_yx().max_abs_diff(&syx) < 1e-13);
        let j = jointness_residual(&sxx, &syx).unwrap();
        assert!(j.ratio < 1e-10, "{}", j.ratio);
    }
}

#[test]
fn identity_second_moment_is_trivially_joint() {
    let syx = gaussian(2, 4, 8);
    let j = jointness_residual(&Matrix::identity(4), &syx).unwrap();
    assert!(j.residual_norm < 1e-14);
    assert!(jointness_residual(&Matrix::identity(4), &Matrix::zeros(2, 4)).is_err());
    assert!(jointness_residual(&Matrix::identity(3), &syx).is_err());
}

#[test]
fn noiseless_samples_sit_on_their_means() {
    let mut s = three_class_spec();
    s.sigma2 = 1e-30;
    let batch = sample(&s, 4, 1).unwrap();
    let means = s.class_means().unwrap();
    for (i, &c) in batch.labels.iter().enumerate() {
        for j in 0..3 {
            assert!((batch.x[(i, j)] - means[(j, c)]).abs() < 1e-10);
        }
    }
}

#[test]
fn label_frequencies_follow_the_priors() {
    let batch = sample(&three_class_spec(), 50_000, 3).unwrap();
    for (c, p) in [0.5, 0.3, 0.2].iter().enumerate() {
        let freq = batch.labels.iter().filter(|&&l| l == c).count() as f64 / 50_000.0;
        assert!((freq - p).abs() < 0.01, "class {c}: {freq}");
    }
}

#[test]
fn batches_are_deterministic_in_seed_and_stream() {
    let s = three_class_spec();
    let a = sample(&s, 64, 5).unwrap();
    let b = sample(&s, 64, 5).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.x, sample(&s, 64, 6).unwrap().x);
    assert_ne!(a.x, sample_stream(&s, 64, 5, "test").unwrap().x);
    assert!(sample(&s, 0, 5).is_err());
}

#[test]
fn empirical_moments_converge_to_the_population() {
    let s = three_class_spec();
    let batch = sample(&s, 100_000, 2).unwrap();
    let (sxx, _) = empirical_moments(&batch);
    let exact = profile(&s).sigma_xx();
    let rel = sxx.lincomb(1.0, &exact, -1.0).frobenius() / exact.frobenius();
    assert!(rel < 0.05, "{rel}");
}

#[test]
fn single_sample_moments_and_duplication() {
    let s = spec(2, 2, 1.0, 0.1, vec![0.5, 0.5]);
    let mut batch = sample(&s, 1, 0).unwrap();
    batch.x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    batch.y = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    batch.labels = vec![0];
    let (sxx, syx) = empirical_moments(&batch);
    assert_eq!(
        sxx,
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()
    );
    assert_eq!(
        syx,
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()
    );

    let base = sample(&s, 5, 1).unwrap();
    let mut doubled = base.clone();
    let stack = |a: &Matrix| {
        let rows: Vec<Vec<f64>> = (0..2 * a.rows())
            .map(|i| a.row(i % a.rows()).to_vec())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    };
    doubled.x = stack(&base.x);
    doubled.y = stack(&base.y);
    doubled.labels = base.labels.iter().chain(&base.labels).copied().collect();
    let (a, b) = (empirical_moments(&base), empirical_moments(&doubled));
    assert!(a.0.max_abs_diff(&b.0) < 1e-15 && a.1.max_abs_diff(&b.1) < 1e-15);
}

#[test]
fn stratified_sampling_fixes_counts() {
    let counts = stratified_counts(&[0.5, 0.3, 0.2], 10).unwrap();
    assert_eq!(counts, vec![5, 3, 2]);
    let tiny = stratified_counts(&[0.97, 0.01, 0.01, 0.01], 10).unwrap();
    assert_eq!(tiny.iter().sum::<usize>(), 10);
    assert!(tiny.iter().all(|&c| c >= 1));
    assert!(stratified_counts(&[0.5, 0.5], 1).is_err());

    let mut s = three_class_spec();
    s.label_sampling = LabelSampling::Stratified;
    let batch = sample(&s, 10, 4).unwrap();
    for (c, &want) in counts.iter().enumerate() {
        assert_eq!(batch.labels.iter().filter(|&&l| l == c).count(), want);
    }
}

#[test]
fn gaussian_means_are_normalised() {
    let mut s = depth_spec(5);
    s.mean_mode = MeanMode::NormalizedGaussian;
    let m = s.class_means().unwrap();
    for c in 0..3 {
        assert!((speclab::linalg::vec_norm(&m.column(c)) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn finite_sample_jointness_residual_is_small() {
    for seed in 0..3 {
        let mut s = three_class_spec();
        s.mean_seed = seed;
        let batch = sample(&s, 2000, seed).unwrap();
        let (sxx, syx) = empirical_moments(&batch);
        let j = jointness_residual(&sxx, &syx).unwrap();
        assert!((0.003..=0.03).contains(&j.ratio), "{}", j.ratio);
        assert!((j.ratio - j.residual_norm / j.sigma_xx_norm).abs() < 1e-15);
    }
}

#[test]
fn jointness_residual_shrinks_with_sample_size() {
    for seed in 0..3 {
        let s = three_class_spec();
        let ratio = |n| {
            let (sxx, syx) = empirical_moments(&sample(&s, n, seed).unwrap());
            jointness_residual(&sxx, &syx).unwrap().ratio
        };
        assert!(ratio(100_000) < ratio(100), "seed {seed}");
    }
}

fn priors_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 1..8).prop_map(|w| {
        let total: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let rest: f64 = p[1..].iter().sum();
        p[0] = 1.0 - rest;
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectra_follow_the_closed_forms(
        priors in priors_strategy(),
        extra in 0usize..3,
        mu in 0.2f64..3.0,
        sigma2 in 0.01f64..2.0,
        seed in 0u64..100,
    ) {
        let k = priors.len();
        let mut s = spec(k, k + extra, mu, sigma2, priors);
        s.mean_seed = seed;
        let p = population_spectra(&s).unwrap();
        prop_assert!(p.priors.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..k {
            prop_assert!((p.s_yx[c] - mu * p.priors[c]).abs() < 1e-14);
            prop_assert!((p.s_xx[c] - mu * mu * p.priors[c] - sigma2).abs() < 1e-14);
            prop_assert!(p.ratio(c) < 1.0 / mu);
            prop_assert_eq!(p.priors[c], s.priors[p.user_index[c]]);
        }
        prop_assert!(p.s_xx[k..].iter().all(|&x| x == sigma2));
        let (sxx, syx) = s.population_moments().unwrap();
        prop_assert!(p.sigma_xx().max_abs_diff(&sxx) < 1e-12);
        prop_assert!(p.sigma_yx().max_abs_diff(&syx) < 1e-12);
    }

    #[test]
    fn batches_have_one_hot_labels(priors in priors_strategy(), n in 1usize..40, seed in 0u64..1000) {
        let k = priors.len();
        let batch = sample(&spec(k, k + 1, 1.0, 0.3, priors), n, seed).unwrap();
        prop_assert_eq!(batch.len(), n);
        for i in 0..n {
            let row = batch.y.row(i);
            prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
            prop_assert_eq!(row[batch.labels[i]], 1.0);
        }
    }

    #[test]
    fn stratified_counts_sum_to_n(priors in priors_strategy(), extra in 0usize..200) {
        let n = priors.len() + extra;
        let counts = stratified_counts(&priors, n).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        prop_assert!(counts.iter().all(|&c| c >= 1));
    }
}
