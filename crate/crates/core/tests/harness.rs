use std::path::{Path, PathBuf};

use speclab::data::SpectralProfile;
use speclab::dynamics::gd_discrete;
use speclab::harness::config::ProviderKind;
use speclab::harness::io::read_losses;
use speclab::harness::runner::{report, simulate_one, write_simulation};
use speclab::harness::verify::dynamics_checks;
use speclab::harness::{
    closed_form, parse_t_grid, simulate, spectra, ClosedFormAlgo, ExperimentConfig, Suite,
};
use speclab::{Error, Result};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).unwrap()
}

fn three_class_toml() -> String {
    std::fs::read_to_string(configs_dir().join("three_class.toml")).unwrap()
}

#[test]
fn every_shipped_config_loads_and_validates() {
    let mut count = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let config =
                ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            config.validate().unwrap();
            assert!(!config.optimizers.is_empty());
            spectra(&config).unwrap();
            count += 1;
        }
    }
    assert!(count >= 4);
}

#[test]
fn priors_that_do_not_sum_to_one_are_located() {
    let text = three_class_toml().replace("[0.5, 0.3, 0.2]", "[0.5, 0.3, 0.1]");
    match ExperimentConfig::from_toml(&text) {
        Err(Error::Config { line, key, msg }) => {
            assert_eq!(key.as_deref(), Some("priors"));
            let expected = text.lines().position(|l| l.starts_with("priors")).unwrap() + 1;
            assert_eq!(line, Some(expected));
            assert!(msg.contains("sum to 1"), "{msg}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn unknown_keys_and_bad_values_are_config_errors() {
    let unknown = three_class_toml().replace("sigma2 = 0.125", "sigma2 = 0.125\nsigma3 = 1.0");
    let err = ExperimentConfig::from_toml(&unknown).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("sigma3"), "{err}");
    let bad_rule = three_class_toml().replace("rule = \"ngd\"", "rule = \"lion\"");
    assert!(ExperimentConfig::from_toml(&bad_rule)
        .unwrap_err()
        .is_config());
    let negative = three_class_toml().replace("sigma2 = 0.125", "sigma2 = -1.0");
    assert!(ExperimentConfig::from_toml(&negative)
        .unwrap_err()
        .is_config());
}

#[test]
fn configs_round_trip_through_toml() {
    let config = load("zipf_ce.toml");
    let again = ExperimentConfig::from_toml(&config.to_toml()).unwrap();
    assert_eq!(again.to_toml(), config.to_toml());
    assert_eq!(again.provider.kind, ProviderKind::Finite);
    assert_eq!(again.run.seeds, vec![0, 1, 2, 3, 4]);
}

#[test]
fn t_grid_parsing() {
    assert_eq!(parse_t_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
    assert_eq!(parse_t_grid("2:2:1").unwrap(), vec![2.0]);
    assert!(parse_t_grid("0:1:0").unwrap().is_empty());
    for bad in ["0:1", "a:1:3", "1:0:3", "0:1:x", "-1:1:3"] {
        assert!(parse_t_grid(bad).unwrap_err().is_config(), "{bad}");
    }
}

#[test]
fn spectra_table_of_the_three_class_config() {
    let report = spectra(&load("three_class.toml")).unwrap();
    let p = &report.profile;
    assert_eq!(p.k, 3);
    assert!((p.s_yx[0] - 0.5).abs() < 1e-15);
    assert!((p.s_xx[0] - 0.625).abs() < 1e-15);
    assert!((p.ratios()[0] - 0.8).abs() < 1e-15);
    let table = report.table();
    assert!(table.contains("0.625000"), "{table}");
}

#[test]
fn closed_form_gd_matches_the_simulation_row_for_row() {
    let config = load("three_class.toml");
    let cf = closed_form(&config, &[ClosedFormAlgo::Gd, ClosedFormAlgo::SpecGd], None).unwrap();
    assert_eq!(cf.records.len(), 2);
    assert_eq!(cf.records[0].0, "three-class-gd");
    let gd_index = config
        .optimizers
        .iter()
        .position(|o| o.rule.tag() == "gd")
        .unwrap();
    let sim = simulate_one(&config, gd_index, 0).unwrap().record;
    let exact = &cf.records[0].1;
    assert_eq!(sim.times, exact.times);
    let mut worst: f64 = 0.0;
    for (a, b) in sim.alpha.iter().zip(&exact.alpha) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn closed_form_specgd_matches_the_simulation_before_saturation() {
    let config = load("three_class.toml");
    let cf = closed_form(&config, &[ClosedFormAlgo::SpecGd], None).unwrap();
    let index = config
        .optimizers
        .iter()
        .position(|o| o.rule.tag() == "specgd")
        .unwrap();
    let sim = simulate_one(&config, index, 0).unwrap().record;
    let p = spectra(&config).unwrap().profile;
    let eta = config.optimizers[index].eta;
    let exact = &cf.records[0].1;
    let mut compared = 0;
    for (i, &t) in exact.times.iter().enumerate() {
        for c in 0..p.k {
            if t * eta <= p.ratios()[c] {
                assert!(
                    (sim.alpha[i][c] - exact.alpha[i][c]).abs() < 1e-9,
                    "step {t} component {c}"
                );
                compared += 1;
            }
        }
    }
    assert!(compared > 100);
}

#[test]
fn closed_form_flows_follow_an_explicit_grid() {
    let config = load("heavy_tail.toml");
    let grid = parse_t_grid(config.run.t_grid.as_deref().unwrap()).unwrap();
    let cf = closed_form(
        &config,
        &[
            ClosedFormAlgo::Gf,
            ClosedFormAlgo::SpecGf,
            ClosedFormAlgo::Ngf,
        ],
        None,
    )
    .unwrap();
    for (id, rec) in &cf.records {
        assert_eq!(rec.times.len(), grid.len(), "{id}");
        assert!(rec.alpha.iter().flatten().all(|x| x.is_finite()));
    }
}

#[test]
fn missing_step_size_is_a_config_error() {
    let mut config = load("depth_bilinear.toml");
    config.optimizers.retain(|o| o.rule.tag() != "gd");
    let err = closed_form(&config, &[ClosedFormAlgo::Gd], None).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("optimizer"), "{err}");
}

#[test]
fn layered_closed_forms_report_depth_gaps() {
    let config = load("depth_bilinear.toml");
    let cf = closed_form(&config, &[ClosedFormAlgo::Bilinear], None).unwrap();
    assert_eq!(cf.records.len(), 1);
    assert!(!cf.gaps.is_empty());
    assert!(cf
        .gaps
        .iter()
        .all(|(_, gap)| gap.is_finite() && *gap >= 0.0));
}

#[test]
fn empty_algorithm_set_writes_a_header_only_trajectory() {
    let config = load("three_class.toml");
    let cf = closed_form(&config, &ClosedFormAlgo::parse_list("").unwrap(), None).unwrap();
    assert!(cf.records.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    speclab::harness::io::write_trajectory(&path, &[]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("run_id,algo,"), "{text}");
}

fn write_run(config: &ExperimentConfig, dir: &Path) -> (String, String) {
    let results = simulate(config).unwrap();
    write_simulation(dir, &results).unwrap();
    (
        std::fs::read_to_string(dir.join("trajectory.csv")).unwrap(),
        std::fs::read_to_string(dir.join("losses.csv")).unwrap(),
    )
}

fn short_momentum_config() -> ExperimentConfig {
    let mut config = load("step_momentum.toml");
    config.run.steps = 30;
    config.run.seeds = vec![0, 1, 2];
    config.optimizers.truncate(1);
    config
}

#[test]
fn repeated_simulations_write_identical_csv_files() {
    let config = short_momentum_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = write_run(&config, a.path());
    let second = write_run(&config, b.path());
    assert_eq!(first, second);
    assert!(first.0.lines().count() > 1);
}

#[test]
fn each_seed_gets_its_own_manifest_and_stream() {
    let config = short_momentum_config();
    let dir = tempfile::tempdir().unwrap();
    let results = simulate(&config).unwrap();
    write_simulation(dir.path(), &results).unwrap();
    assert_eq!(results.len(), 3);
    let mut ids: Vec<&str> = results.iter().map(|r| r.manifest.run_id.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 3);
    let manifests = std::fs::read_dir(dir.path().join("manifests"))
        .unwrap()
        .count();
    assert_eq!(manifests, 3);
    for pair in results.windows(2) {
        assert_ne!(pair[0].record.alpha.last(), pair[1].record.alpha.last());
    }
    for r in &results {
        assert_eq!(
            r.manifest.seed,
            r.manifest
                .run_id
                .split('-')
                .nth_back(1)
                .unwrap()
                .parse::<u64>()
                .unwrap()
        );
    }
}

#[test]
fn report_aggregates_losses_per_run() {
    let mut config = short_momentum_config();
    config.run.seeds = vec![0, 1];
    let dir = tempfile::tempdir().unwrap();
    let results = simulate(&config).unwrap();
    write_simulation(dir.path(), &results).unwrap();
    let rows = read_losses(&dir.path().join("losses.csv")).unwrap();
    let summary = report(&rows);
    assert_eq!(summary.len(), 2);
    for (s, r) in summary.iter().zip(&results) {
        assert_eq!(s.run_id, r.manifest.run_id);
        assert_eq!(s.final_step, *r.record.times.last().unwrap());
        let last = r.record.losses.as_ref().unwrap().last().unwrap();
        let mean = last.iter().sum::<f64>() / last.len() as f64;
        assert!((s.final_balanced_loss - mean).abs() < 1e-12 * mean.max(1.0));
        assert!(s.final_worst_loss >= s.final_balanced_loss);
    }
}

#[test]
fn a_wrong_gd_oracle_fails_the_dynamics_check() {
    let honest = dynamics_checks(&gd_discrete).unwrap();
    let named = |checks: &[speclab::harness::Check], name: &str| {
        checks.iter().find(|c| c.name == name).cloned().unwrap()
    };
    assert!(named(&honest, "gd matches closed form, 200 steps").pass);
    let corrupted = |p: &SpectralProfile, eta: f64, t: usize| -> Result<Vec<f64>> {
        Ok((0..p.k)
            .map(|c| (1.0 + (1.0 - eta * p.s_xx[c]).powi(t as i32)) * p.ratios()[c])
            .collect())
    };
    let checks = dynamics_checks(&corrupted).unwrap();
    let gd = named(&checks, "gd matches closed form, 200 steps");
    assert!(!gd.pass);
    assert!(gd.measured > 0.1, "{}", gd.measured);
}

#[test]
fn suite_names_parse() {
    for name in [
        "reductions",
        "dynamics",
        "theorems",
        "depth",
        "jointness",
        "kernels",
        "imbalance",
        "all",
    ] {
        assert_eq!(name.parse::<Suite>().unwrap().tag(), name);
    }
    assert!("everything".parse::<Suite>().unwrap_err().is_config());
}

#[test]
fn reduction_suite_passes() {
    let checks = Suite::Reductions.run().unwrap();
    assert_eq!(checks.len(), 4);
    assert!(checks.iter().all(|c| c.pass), "{checks:?}");
}
