mod common;

use common::*;
use proptest::prelude::*;
use speclab::data::SampleBatch;
use speclab::linalg::{norm, polar_factor, NormKind, PolarMethod};
use speclab::optim::{
    run, step, GradientProvider, OptimizerConfig, OptimizerState, Recording, Rule, RunOptions,
};
use speclab::{Error, Matrix};

/// Applies `config` to a fixed seeded gradient sequence and returns the iterates.
fn gradient_sequence_run(
    config: &OptimizerConfig,
    rows: usize,
    cols: usize,
    steps: usize,
) -> Vec<Matrix> {
    let mut state = OptimizerState::linear(Matrix::zeros(rows, cols));
    let mut iterates = Vec::new();
    for t in 0..steps {
        let g = gaussian(rows, cols, 1000 + t as u64);
        state = step(config, &state, &[g]).unwrap();
        iterates.push(state.layers[0].clone());
    }
    iterates
}

fn max_diff(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max)
}

fn reduction_gap(general: Rule, special: Rule) -> f64 {
    let a = gradient_sequence_run(&OptimizerConfig::new(general, 0.01).memoryless(), 5, 4, 50);
    let b = gradient_sequence_run(&OptimizerConfig::new(special, 0.01), 5, 4, 50);
    max_diff(&a, &b)
}

#[test]
fn memoryless_rules_reduce_to_their_steepest_descent_counterparts() {
    assert!(reduction_gap(Rule::Shampoo, Rule::SpecGd) < 1e-6);
    assert_eq!(reduction_gap(Rule::Adam, Rule::SignGd), 0.0);
    assert!(reduction_gap(Rule::Muon, Rule::SpecGd) < 1e-12);
    assert!(reduction_gap(Rule::Nmd, Rule::Ngd) < 1e-12);
    assert!(reduction_gap(Rule::Signum, Rule::SignGd) < 1e-12);
}

#[test]
fn gradient_at_zero_is_minus_the_cross_moment() {
    let p = profile(&three_class_spec());
    let provider = GradientProvider::population(&p);
    let g = provider.gradient(&[Matrix::zeros(3, 3)]).unwrap().remove(0);
    assert!(g.max_abs_diff(&p.sigma_yx().scale(-1.0)) < 1e-15);
    // The polar factor of -Σ_yx is -U V_kᵀ.
    let polar = polar_factor(&g, PolarMethod::ExactSvd).unwrap();
    assert!(polar.max_abs_diff(&p.compose(&[-1.0; 3])) < 1e-12);
}

#[test]
fn terminal_matrix_is_stationary() {
    for s in [three_class_spec(), depth_spec(5), heavy_tail_spec()] {
        let p = profile(&s);
        let provider = GradientProvider::population(&p);
        let g = provider.gradient(&[p.terminal()]).unwrap().remove(0);
        assert!(g.max_abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_gradient_of_a_single_sample() {
    let batch = SampleBatch {
        x: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        y: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        labels: vec![0],
    };
    let provider = GradientProvider::empirical_cross_entropy(batch);
    let g = provider.gradient(&[Matrix::zeros(2, 2)]).unwrap().remove(0);
    let want = Matrix::from_rows(&[vec![-0.5, 0.0], vec![0.5, 0.0]]).unwrap();
    assert!(g.max_abs_diff(&want) < 1e-15);
    assert!((provider.loss(&Matrix::zeros(2, 2)).unwrap() - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn shape_mismatches_are_reported() {
    let p = profile(&three_class_spec());
    let provider = GradientProvider::population(&p);
    assert!(matches!(
        provider.gradient(&[Matrix::zeros(2, 3)]),
        Err(Error::ShapeMismatch { .. })
    ));
    let state = OptimizerState::linear(Matrix::zeros(3, 3));
    let cfg = OptimizerConfig::new(Rule::Gd, 0.1);
    assert!(matches!(
        step(&cfg, &state, &[Matrix::zeros(3, 2)]),
        Err(Error::ShapeMismatch { .. })
    ));
    assert!(step(&cfg, &state, &[]).is_err());
}

/// Central finite differences of the loss with respect to every layer entry.
fn numeric_gradient(provider: &GradientProvider, layers: &[Matrix]) -> Vec<Matrix> {
    let h = 1e-6;
    let loss = |ls: &[Matrix]| {
        let mut w = ls[0].clone();
        for l in &ls[1..] {
            w = l.matmul(&w);
        }
        provider.loss(&w).unwrap()
    };
    (0..layers.len())
        .map(|l| {
            Matrix::from_fn(layers[l].rows(), layers[l].cols(), |i, j| {
                let mut plus = layers.to_vec();
                let mut minus = layers.to_vec();
                plus[l][(i, j)] += h;
                minus[l][(i, j)] -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            })
        })
        .collect()
}

#[test]
fn layer_gradients_match_finite_differences() {
    let p = profile(&depth_spec(4));
    let squared = GradientProvider::population(&p);
    let layers = vec![
        gaussian(5, 4, 1).scale(0.3),
        gaussian(4, 5, 2).scale(0.3),
        gaussian(3, 4, 3).scale(0.3),
    ];
    let exact = squared.gradient(&layers).unwrap();
    for (a, b) in exact.iter().zip(numeric_gradient(&squared, &layers)) {
        assert!(a.max_abs_diff(&b) < 1e-7);
    }

    let batch = speclab::data::sample(&depth_spec(4), 30, 0).unwrap();
    let ce = GradientProvider::empirical_cross_entropy(batch.clone());
    let w = vec![gaussian(3, 4, 9)];
    let exact = ce.gradient(&w).unwrap();
    assert!(exact[0].max_abs_diff(&numeric_gradient(&ce, &w)[0]) < 1e-7);

    let sq = GradientProvider::empirical_squared(&batch);
    assert!(sq.gradient(&w).unwrap()[0].max_abs_diff(&numeric_gradient(&sq, &w)[0]) < 1e-7);
}

#[test]
fn first_spectral_step_from_zero_moves_every_component_by_eta() {
    let p = profile(&three_class_spec());
    let provider = GradientProvider::population(&p);
    let state = OptimizerState::linear(Matrix::zeros(3, 3));
    let grads = provider.state_gradient(&state).unwrap();
    let next = step(&OptimizerConfig::new(Rule::SpecGd, 0.01), &state, &grads).unwrap();
    let projected = p.project(&next.layers[0]);
    assert!(projected.max_abs_diff(&Matrix::identity(3).scale(0.01)) < 1e-15);
    assert_eq!(next.step, 1);
}

#[test]
fn zero_gradient_leaves_weights_but_decays_accumulators() {
    let w = gaussian(3, 2, 4);
    for rule in Rule::ALL {
        let mut state = OptimizerState::linear(w.clone());
        state.momentum[0] = Matrix::from_fn(3, 2, |_, _| 1e-301);
        state.left[0] = Matrix::identity(3);
        state.second_moment[0] = Matrix::from_fn(3, 2, |_, _| 1.0);
        let cfg = OptimizerConfig::new(rule, 0.1);
        let next = step(&cfg, &state, &[Matrix::zeros(3, 2)]).unwrap();
        assert_eq!(next.layers[0], w, "{rule}");
        assert_eq!(next.step, 1);
        match rule {
            Rule::Shampoo => assert!((next.left[0][(0, 0)] - 0.999).abs() < 1e-15),
            Rule::Adam => assert!((next.second_moment[0][(0, 0)] - 0.999).abs() < 1e-15),
            _ => {}
        }
    }
}

#[test]
fn non_finite_gradients_and_updates_carry_the_step() {
    let mut state = OptimizerState::linear(Matrix::zeros(2, 2));
    state.step = 7;
    let cfg = OptimizerConfig::new(Rule::Gd, 1.0);
    let nan = Matrix::from_fn(2, 2, |_, _| f64::NAN);
    assert!(matches!(
        step(&cfg, &state, &[nan]),
        Err(Error::NonFiniteUpdate { step: 7 })
    ));
    let huge = Matrix::from_fn(2, 2, |_, _| f64::MAX);
    let cfg = OptimizerConfig::new(Rule::Gd, 10.0);
    assert!(matches!(
        step(&cfg, &state, &[huge]),
        Err(Error::NonFiniteUpdate { step: 7 })
    ));
}

#[test]
fn divergent_gradient_descent_reports_the_failing_step() {
    let p = profile(&three_class_spec());
    let provider = GradientProvider::population(&p);
    let init = OptimizerState::linear(Matrix::zeros(3, 3));
    let options = RunOptions {
        steps: 100_000,
        stop_grad_norm: 0.0,
        record_every: 1,
    };
    let err = run(
        &OptimizerConfig::new(Rule::Gd, 100.0),
        &provider,
        &init,
        &options,
        Recording::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::NonFiniteUpdate { step } if step > 10),
        "{err}"
    );
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let mut cfg = OptimizerConfig::new(Rule::Adam, 0.1);
    cfg.beta2 = 1.0;
    assert!(cfg.validate().is_err());
    assert!(OptimizerConfig::new(Rule::Gd, 0.0).validate().is_err());
    assert!(OptimizerConfig::new(Rule::Gd, f64::NAN).validate().is_err());
}

#[test]
fn adam_applies_bias_correction() {
    let cfg = OptimizerConfig {
        epsilon: 0.0,
        ..OptimizerConfig::new(Rule::Adam, 1.0)
    };
    let g = Matrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
    let state = OptimizerState::linear(Matrix::zeros(1, 2));
    let one = step(&cfg, &state, std::slice::from_ref(&g)).unwrap();
    // With bias correction the first step is exactly the sign.
    assert!(one.layers[0].max_abs_diff(&Matrix::from_rows(&[vec![-1.0, 1.0]]).unwrap()) < 1e-12);
    let two = step(&cfg, &one, &[g]).unwrap();
    assert!(two.layers[0].max_abs_diff(&Matrix::from_rows(&[vec![-2.0, 2.0]]).unwrap()) < 1e-12);
}

#[test]
fn zero_step_budget_records_only_the_initial_state() {
    let p = profile(&three_class_spec());
    let provider = GradientProvider::population(&p);
    let init = OptimizerState::linear(Matrix::zeros(3, 3));
    let options = RunOptions {
        steps: 0,
        ..RunOptions::default()
    };
    let recording = Recording {
        profile: Some(&p),
        ..Default::default()
    };
    let out = run(
        &OptimizerConfig::new(Rule::SpecGd, 0.01),
        &provider,
        &init,
        &options,
        recording,
    )
    .unwrap();
    assert_eq!(out.record.len(), 1);
    assert_eq!(out.steps_taken, 0);
    assert_eq!(out.record.alpha[0], vec![0.0; 3]);
}

#[test]
fn gradient_stop_fires_at_the_terminal_point() {
    let p = profile(&three_class_spec());
    let provider = GradientProvider::population(&p);
    let init = OptimizerState::linear(p.terminal());
    let out = run(
        &OptimizerConfig::new(Rule::Gd, 0.01),
        &provider,
        &init,
        &RunOptions::default(),
        Recording::default(),
    )
    .unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.steps_taken, 0);
}

#[test]
fn confined_rules_stay_diagonal_in_the_spectral_basis() {
    let p = profile(&depth_spec(5));
    let provider = GradientProvider::population(&p);
    let init = OptimizerState::linear(Matrix::zeros(3, 5));
    let options = RunOptions {
        steps: 60,
        stop_grad_norm: 0.0,
        record_every: 1,
    };
    for rule in [Rule::Gd, Rule::Ngd, Rule::SpecGd] {
        let recording = Recording {
            profile: Some(&p),
            ..Default::default()
        };
        let out = run(
            &OptimizerConfig::new(rule, 0.01),
            &provider,
            &init,
            &options,
            recording,
        )
        .unwrap();
        let worst = out.record.offdiag.unwrap().into_iter().fold(0.0, f64::max);
        assert!(worst < 1e-9, "{rule}: {worst}");
    }
}

#[test]
fn small_step_gradient_descent_never_increases_the_loss() {
    let p = profile(&three_class_spec());
    let provider = GradientProvider::population(&p);
    let eta = 0.9 / p.s_xx[0];
    let mut state = OptimizerState::linear(gaussian(3, 3, 2));
    let cfg = OptimizerConfig::new(Rule::Gd, eta);
    let mut last = provider.loss(&state.layers[0]).unwrap();
    for _ in 0..200 {
        let g = provider.state_gradient(&state).unwrap();
        state = step(&cfg, &state, &g).unwrap();
        let l = provider.loss(&state.layers[0]).unwrap();
        assert!(l <= last + 1e-12);
        last = l;
    }
}

#[test]
fn spectral_steps_grow_unsaturated_components_at_equal_rates() {
    let p = profile(&heavy_tail_spec());
    let provider = GradientProvider::population(&p);
    let eta = 0.002;
    let cfg = OptimizerConfig::new(Rule::SpecGd, eta);
    let mut state = OptimizerState::linear(Matrix::zeros(10, 10));
    let mut prev = vec![0.0; 10];
    let ratios = p.ratios();
    for _ in 0..100 {
        let g = provider.state_gradient(&state).unwrap();
        state = step(&cfg, &state, &g).unwrap();
        let alpha = p.alpha(&state.layers[0]);
        for c in 0..10 {
            if alpha[c] < ratios[c] - eta {
                assert!((alpha[c] - prev[c] - eta).abs() < 1e-12);
            }
        }
        prev = alpha;
    }
}

fn full_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop_oneof![-5.0f64..-0.01, 0.01f64..5.0], r * c)
            .prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn updates_have_unit_size_in_their_own_norm(g in full_matrix(), eta in 1e-4f64..1.0) {
        let state = OptimizerState::linear(Matrix::zeros(g.rows(), g.cols()));
        for (rule, kind) in [(Rule::Ngd, NormKind::Frobenius), (Rule::SignGd, NormKind::MaxAbs), (Rule::SpecGd, NormKind::Spectral)] {
            let next = step(&OptimizerConfig::new(rule, eta), &state, std::slice::from_ref(&g)).unwrap();
            let delta = next.layers[0].scale(-1.0 / eta);
            prop_assert!((norm(&delta, kind).unwrap() - 1.0).abs() < 1e-9, "{}", rule);
            prop_assert!(delta.inner(&g) > 0.0);
        }
    }

    #[test]
    fn momentum_accumulators_keep_their_shapes(seed in 0u64..500, rows in 1usize..5, cols in 1usize..5) {
        let mut state = OptimizerState::linear(Matrix::zeros(rows, cols));
        for rule in Rule::ALL {
            let cfg = OptimizerConfig::new(rule, 0.01);
            let next = step(&cfg, &state, &[gaussian(rows, cols, seed)]).unwrap();
            prop_assert_eq!(next.step, state.step + 1);
            prop_assert_eq!(next.momentum[0].shape(), (rows, cols));
            prop_assert_eq!(next.left[0].shape(), (rows, rows));
            prop_assert_eq!(next.right[0].shape(), (cols, cols));
            state.step = next.step;
        }
    }
}
