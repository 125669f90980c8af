use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn speclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclab"))
        .args(args)
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path: PathBuf = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn three_class_with(from: &str, to: &str) -> String {
    std::fs::read_to_string(config("three_class.toml"))
        .unwrap()
        .replace(from, to)
}

#[test]
fn spectra_prints_the_joint_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = speclab(&[
        "spectra",
        "--config",
        &config("three_class.toml"),
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let first = text.lines().nth(1).unwrap();
    for value in ["0.500000", "0.625000", "0.800000"] {
        assert!(first.contains(value), "{first}");
    }
    let csv = std::fs::read_to_string(dir.path().join("spectra.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn spectra_of_a_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        "name = \"one\"\n[data]\nmu = 1.0\nsigma2 = 0.125\npriors = [1.0]\n[[optimizer]]\nrule = \"gd\"\neta = 0.1\n",
    );
    let o = speclab(&[
        "spectra",
        "--config",
        &path,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("spectra.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn bad_priors_exit_with_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        &three_class_with("[0.5, 0.3, 0.2]", "[0.5, 0.3, 0.1]"),
    );
    let o = speclab(&[
        "spectra",
        "--config",
        &path,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("sum to 1") && err.contains("priors"), "{err}");
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let o = speclab(&["spectra", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn empty_algorithm_list_writes_a_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = speclab(&[
        "closed-form",
        "--config",
        &config("three_class.toml"),
        "--out",
        out,
        "--algos",
        "",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn closed_form_writes_requested_families_and_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = speclab(&[
        "closed-form",
        "--config",
        &config("depth_bilinear.toml"),
        "--out",
        out,
        "--algos",
        "specgd,bilinear",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.contains("depth-bilinear-specgd") && csv.contains("depth-bilinear-bilinear"));
    assert!(dir.path().join("saturation_gap.csv").exists());
    let bad = speclab(&[
        "closed-form",
        "--config",
        &config("three_class.toml"),
        "--out",
        out,
        "--algos",
        "lbfgs",
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let grid = speclab(&[
        "closed-form",
        "--config",
        &config("three_class.toml"),
        "--out",
        out,
        "--t-grid",
        "0:1",
    ]);
    assert_eq!(grid.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = speclab(&[
            "simulate",
            "--config",
            &config("three_class.toml"),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["trajectory.csv", "losses.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file}");
    }
    let manifests = std::fs::read_dir(a.path().join("manifests"))
        .unwrap()
        .count();
    assert_eq!(manifests, 3);
}

#[test]
fn seeds_override_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = speclab(&[
        "simulate",
        "--config",
        &config("three_class.toml"),
        "--out",
        out,
        "--seeds",
        "3,4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_dir(dir.path().join("manifests"))
            .unwrap()
            .count(),
        6
    );
    let r = speclab(&["report", "--out", out]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    let bad = speclab(&[
        "simulate",
        "--config",
        &config("three_class.toml"),
        "--out",
        out,
        "--seeds",
        "x",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn divergent_runs_report_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &three_class_with("eta = 0.01", "eta = 100.0"));
    let o = speclab(&[
        "simulate",
        "--config",
        &path,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("step"), "{err}");
}

#[test]
fn verify_reductions_passes() {
    let o = speclab(&["verify", "--suite", "reductions"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        4,
        "{text}"
    );
    assert!(!text.contains("FAIL"));
}

#[test]
fn unknown_suite_is_a_config_error() {
    let o = speclab(&["verify", "--suite", "everything"]);
    assert_eq!(o.status.code(), Some(2));
}
