//! CSV and JSON outputs.
//!
//! Component, class and layer indices are 1-based in every file. Empty
//! cells mark values that do not apply to a row.

use crate::data::SpectralProfile;
use crate::error::{Error, Result};
use crate::trajectory::TrajectoryRecord;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::path::Path;

/// Columns of `trajectory.csv`.
pub const TRAJECTORY_HEADER: [&str; 8] = [
    "run_id",
    "algo",
    "step_or_time",
    "component",
    "alpha",
    "layer",
    "offdiag_residual",
    "grad_norm",
];

/// Columns of `losses.csv`.
pub const LOSSES_HEADER: [&str; 7] = [
    "run_id",
    "algo",
    "step_or_time",
    "class_user_index",
    "class_spectral_index",
    "loss",
    "accuracy",
];

/// Columns of `spectra.csv`.
pub const SPECTRA_HEADER: [&str; 7] = [
    "component",
    "class_user_index",
    "prior",
    "s_yx",
    "s_xx",
    "ratio",
    "saturation_time",
];

/// Columns of `saturation_gap.csv`.
pub const GAP_HEADER: [&str; 2] = ["depth", "delta_t"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `(run_id, record)` pairs to `trajectory.csv`.
///
/// One row per sample and component carries the end-to-end coefficient;
/// layered records add one row per layer with the `layer` column set.
pub fn write_trajectory(path: &Path, runs: &[(String, &TrajectoryRecord)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for (run_id, rec) in runs {
        for (i, &t) in rec.times.iter().enumerate() {
            let offdiag = cell(rec.offdiag.as_ref().map(|o| o[i]));
            let grad = cell(rec.grad_norm.as_ref().map(|g| g[i]));
            let time = t.to_string();
            for (c, a) in rec.alpha[i].iter().enumerate() {
                w.write_record([
                    run_id.as_str(),
                    &rec.algo,
                    &time,
                    &(c + 1).to_string(),
                    &a.to_string(),
                    "",
                    &offdiag,
                    &grad,
                ])?;
            }
            if let Some(layers) = &rec.layer_alpha {
                for (l, row) in layers[i].iter().enumerate() {
                    for (c, a) in row.iter().enumerate() {
                        w.write_record([
                            run_id.as_str(),
                            &rec.algo,
                            &time,
                            &(c + 1).to_string(),
                            &a.to_string(),
                            &(l + 1).to_string(),
                            &offdiag,
                            &grad,
                        ])?;
                    }
                }
            }
        }
    }
    finish(w, path)
}

/// Writes per-class losses and accuracies of `(run_id, record)` pairs.
pub fn write_losses(path: &Path, runs: &[(String, &TrajectoryRecord)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(LOSSES_HEADER)?;
    for (run_id, rec) in runs {
        let Some(losses) = &rec.losses else { continue };
        for (i, row) in losses.iter().enumerate() {
            let time = rec.times[i].to_string();
            for (j, &loss) in row.iter().enumerate() {
                let acc = rec.accuracy.as_ref().and_then(|a| a[i][j]);
                w.write_record([
                    run_id.as_str(),
                    &rec.algo,
                    &time,
                    &(rec.class_user_index[j] + 1).to_string(),
                    &(j + 1).to_string(),
                    &cell(loss.is_finite().then_some(loss)),
                    &cell(acc),
                ])?;
            }
        }
    }
    finish(w, path)
}

/// Writes the spectra of a profile.
pub fn write_spectra(path: &Path, profile: &SpectralProfile) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SPECTRA_HEADER)?;
    for c in 0..profile.k {
        w.write_record([
            (c + 1).to_string(),
            (profile.user_index[c] + 1).to_string(),
            profile.priors[c].to_string(),
            profile.s_yx[c].to_string(),
            profile.s_xx[c].to_string(),
            profile.ratio(c).to_string(),
            profile.ratio(c).to_string(),
        ])?;
    }
    finish(w, path)
}

/// Writes `(depth, ΔT)` pairs.
pub fn write_saturation_gap(path: &Path, gaps: &[(usize, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(GAP_HEADER)?;
    for (depth, gap) in gaps {
        w.write_record([depth.to_string(), gap.to_string()])?;
    }
    finish(w, path)
}

/// Metadata of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `name-rule-seed-hash8`.
    pub run_id: String,
    /// Experiment name.
    pub name: String,
    /// Rule tag.
    pub algo: String,
    /// Run seed.
    pub seed: u64,
    /// Index of the optimizer table in the configuration.
    pub optimizer_index: usize,
    /// Updates applied.
    pub steps_taken: usize,
    /// Whether the gradient-norm stop fired.
    pub stopped_early: bool,
    /// Advisory messages.
    pub warnings: Vec<String>,
    /// Crate version.
    pub tool_version: String,
    /// Wall-clock seconds of the run.
    pub wall_time_s: f64,
    /// The configuration, as TOML.
    pub config: String,
}

/// Writes a manifest as pretty JSON.
pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(file, manifest)?;
    Ok(())
}

/// One parsed row of `losses.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LossRow {
    pub run_id: String,
    pub algo: String,
    pub step_or_time: f64,
    pub class_user_index: usize,
    pub class_spectral_index: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Reads `losses.csv`, checking the header.
pub fn read_losses(path: &Path) -> Result<Vec<LossRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != LOSSES_HEADER {
        return Err(Error::spec(
            "losses file",
            format!("unexpected header {header:?}, expected {LOSSES_HEADER:?}"),
        ));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
