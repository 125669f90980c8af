//! Experiment configuration in TOML.
//!
//! A configuration has a top-level `name`, the sections `[data]`,
//! `[model]`, `[provider]` and `[run]`, and one `[[optimizer]]` table per
//! update rule. Only `name` and `[data]` are required.

use crate::data::{make_priors, DataModelSpec, LabelSampling, MeanMode, PriorScheme};
use crate::dynamics::DeepInitSpec;
use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Generated prior families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    /// `p_c ∝ 1/c`.
    Zipf,
    /// Two prior levels.
    Step,
}

/// `[data]`: the mixture model. Give either `priors` or `scheme`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Number of classes; inferred from `priors` when omitted.
    #[serde(default)]
    pub k: Option<usize>,
    /// Ambient dimension; defaults to `k`.
    #[serde(default)]
    pub d: Option<usize>,
    /// Mean norm.
    pub mu: f64,
    /// Noise variance.
    pub sigma2: f64,
    /// Explicit priors in user order.
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
    /// Generated priors.
    #[serde(default)]
    pub scheme: Option<SchemeName>,
    /// Majority-to-minority prior ratio of the step scheme.
    #[serde(default)]
    pub ratio: Option<f64>,
    /// Number of majority classes of the step scheme.
    #[serde(default)]
    pub majority_count: Option<usize>,
    /// Seed of the class means.
    #[serde(default)]
    pub mean_seed: u64,
    /// Construction of the class means.
    #[serde(default)]
    pub mean_mode: MeanMode,
    /// Label sampling of finite batches.
    #[serde(default)]
    pub label_sampling: LabelSampling,
}

impl DataSection {
    /// Resolves the priors and builds a validated data model.
    pub fn to_spec(&self) -> Result<DataModelSpec> {
        let priors = match (&self.priors, self.scheme) {
            (Some(_), Some(_)) => {
                return Err(Error::spec(
                    "data",
                    "give either priors or scheme, not both",
                ));
            }
            (Some(p), None) => {
                if let Some(k) = self.k {
                    if k != p.len() {
                        return Err(Error::spec(
                            "data",
                            format!("k = {k} but {} priors were given", p.len()),
                        ));
                    }
                }
                make_priors(&PriorScheme::Explicit(p.clone()))?
            }
            (None, Some(scheme)) => {
                let k = self
                    .k
                    .ok_or_else(|| Error::spec("data", "a prior scheme needs k"))?;
                match scheme {
                    SchemeName::Zipf => make_priors(&PriorScheme::Zipf { k })?,
                    SchemeName::Step => make_priors(&PriorScheme::Step {
                        k,
                        ratio: self
                            .ratio
                            .ok_or_else(|| Error::spec("data", "the step scheme needs ratio"))?,
                        majority_count: self.majority_count.unwrap_or(1),
                    })?,
                }
            }
            (None, None) => return Err(Error::spec("data", "give priors or scheme")),
        };
        let k = priors.len();
        let spec = DataModelSpec {
            k,
            d: self.d.unwrap_or(k),
            mu: self.mu,
            sigma2: self.sigma2,
            priors,
            mean_seed: self.mean_seed,
            mean_mode: self.mean_mode,
            label_sampling: self.label_sampling,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Architecture of the trained map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// A single matrix `W`.
    #[default]
    Linear,
    /// Two layers `W¹ W⁰`.
    Bilinear,
    /// `depth` layers.
    Deep,
}

/// `[model]`: architecture and layered initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Architecture.
    #[serde(default)]
    pub kind: ModelKind,
    /// Number of layers of a deep model.
    #[serde(default)]
    pub depth: Option<usize>,
    /// Initialisation exponent of layered models.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Hidden width of layered models.
    #[serde(default)]
    pub inner_width: Option<usize>,
    /// Seed of the hidden bases.
    #[serde(default)]
    pub basis_seed: u64,
}

fn default_delta() -> f64 {
    10.0
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Linear,
            depth: None,
            delta: default_delta(),
            inner_width: None,
            basis_seed: 0,
        }
    }
}

impl ModelSection {
    /// Layered initialisation, `None` for linear models.
    pub fn deep_init(&self) -> Result<Option<DeepInitSpec>> {
        let depth = match self.kind {
            ModelKind::Linear => return Ok(None),
            ModelKind::Bilinear => {
                if matches!(self.depth, Some(d) if d != 2) {
                    return Err(Error::spec("model", "a bilinear model has depth 2"));
                }
                2
            }
            ModelKind::Deep => self
                .depth
                .ok_or_else(|| Error::spec("model", "a deep model needs depth"))?,
        };
        Ok(Some(DeepInitSpec {
            depth,
            delta: self.delta,
            inner_width: self.inner_width,
            basis_seed: self.basis_seed,
        }))
    }
}

/// Source of gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Exact population moments.
    #[default]
    Population,
    /// A seeded finite training batch.
    Finite,
}

/// Training loss of a finite batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared loss.
    #[default]
    Sq,
    /// Softmax cross-entropy.
    Ce,
}

/// Initial iterate of linear models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `W = 0`.
    #[default]
    Zero,
    /// Entries drawn from `N(0, 1/d)`.
    Gaussian,
}

/// `[provider]`: gradient source and evaluation set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    /// Population or finite sample.
    #[serde(default)]
    pub kind: ProviderKind,
    /// Training sample size of finite providers.
    #[serde(default)]
    pub n: Option<usize>,
    /// Training loss of finite providers.
    #[serde(default)]
    pub loss: LossKind,
    /// Held-out sample size; metrics use the training batch when omitted.
    #[serde(default)]
    pub test_n: Option<usize>,
    /// Initial iterate of linear models.
    #[serde(default)]
    pub init: InitKind,
}

/// `[run]`: loop controls and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Update budget.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Recording period; 1 for population runs and 10 for finite
    /// cross-entropy runs when omitted.
    #[serde(default)]
    pub record_every: Option<usize>,
    /// Gradient-norm stopping threshold.
    #[serde(default = "default_stop")]
    pub stop_grad_norm: f64,
    /// Run seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Time grid of closed-form trajectories, `start:stop:count`.
    #[serde(default)]
    pub t_grid: Option<String>,
}

fn default_steps() -> usize {
    100
}

fn default_stop() -> f64 {
    1e-6
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            steps: default_steps(),
            record_every: None,
            stop_grad_norm: default_stop(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            t_grid: None,
        }
    }
}

/// A complete experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment name, the prefix of every run id.
    pub name: String,
    /// Mixture model.
    pub data: DataSection,
    /// Architecture.
    #[serde(default)]
    pub model: ModelSection,
    /// Gradient source.
    #[serde(default)]
    pub provider: ProviderSection,
    /// Loop controls.
    #[serde(default)]
    pub run: RunSection,
    /// Update rules, one per `[[optimizer]]` table.
    #[serde(default, rename = "optimizer")]
    pub optimizers: Vec<OptimizerConfig>,
}

impl ExperimentConfig {
    /// Parses and validates a configuration.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        config.validate().map_err(|e| locate(text, e))?;
        Ok(config)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Serialises the configuration back to TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(config_error("name", "name must not be empty"));
        }
        let spec = self.data.to_spec()?;
        if self.run.seeds.is_empty() {
            return Err(config_error("seeds", "seeds must not be empty"));
        }
        if self.run.record_every == Some(0) {
            return Err(config_error(
                "record_every",
                "record_every must be at least 1",
            ));
        }
        if self.run.stop_grad_norm.is_nan() || self.run.stop_grad_norm < 0.0 {
            return Err(config_error(
                "stop_grad_norm",
                "stop_grad_norm must be non-negative",
            ));
        }
        if let Some(grid) = &self.run.t_grid {
            parse_t_grid(grid)?;
        }
        for opt in &self.optimizers {
            opt.validate()?;
        }
        if self.provider.kind == ProviderKind::Finite {
            let n = self
                .provider
                .n
                .ok_or_else(|| config_error("n", "a finite provider needs n"))?;
            if n == 0 || self.provider.test_n == Some(0) {
                return Err(config_error("n", "sample sizes must be positive"));
            }
        }
        if self.provider.loss == LossKind::Ce && self.provider.kind == ProviderKind::Population {
            return Err(config_error(
                "loss",
                "cross-entropy needs a finite provider",
            ));
        }
        if self.model.kind != ModelKind::Linear && self.provider.init != InitKind::Zero {
            return Err(config_error(
                "init",
                "layered models use the spectral initialisation",
            ));
        }
        if let Some(init) = self.model.deep_init()? {
            let profile = crate::data::population_spectra(&spec)?;
            init.validate(&profile)?;
        }
        Ok(())
    }

    /// The data model.
    pub fn spec(&self) -> Result<DataModelSpec> {
        self.data.to_spec()
    }

    /// Effective recording period.
    pub fn record_every(&self) -> usize {
        self.run.record_every.unwrap_or(
            if self.provider.kind == ProviderKind::Finite && self.provider.loss == LossKind::Ce {
                10
            } else {
                1
            },
        )
    }
}

/// Parses `start:stop:count` into `count` evenly spaced times including both ends.
pub fn parse_t_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| config_error("t_grid", &format!("t_grid `{text}`: {msg}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected start:stop:count"));
    }
    let start: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| bad("start is not a number"))?;
    let stop: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| bad("stop is not a number"))?;
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| bad("count is not an integer"))?;
    if !(start.is_finite() && stop.is_finite()) || start < 0.0 || stop < start {
        return Err(bad("need 0 <= start <= stop"));
    }
    Ok(match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
            .collect(),
    })
}

fn config_error(key: &str, msg: &str) -> Error {
    Error::Config {
        line: None,
        key: Some(key.into()),
        msg: msg.into(),
    }
}

fn parse_error(text: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map(|s| line_of(text, s.start));
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .or_else(|| line.and_then(|l| key_on_line(text, l)));
    Error::Config { line, key, msg }
}

/// Attaches a line number and key to a semantic validation error.
fn locate(text: &str, e: Error) -> Error {
    let (key, msg) = match &e {
        Error::Config { line: Some(_), .. } => return e,
        Error::Config { key, msg, .. } => (key.clone(), msg.clone()),
        Error::InvalidScheme(msg) => (
            Some(guess_key(msg, &["priors", "ratio", "majority_count", "k"])),
            msg.clone(),
        ),
        Error::InvalidSpec { what, msg } => {
            let key = match *what {
                "deep init" => guess_key(msg, &["inner_width", "depth", "delta"]),
                "data model" | "data" => guess_key(msg, &["priors", "sigma2", "mu", "d", "k"]),
                other => other.replace(' ', "_"),
            };
            (Some(key), format!("{what}: {msg}"))
        }
        Error::Dimension(msg) => (Some("d".into()), msg.clone()),
        _ => return e,
    };
    let line = key.as_deref().and_then(|k| find_key(text, k));
    Error::Config { line, key, msg }
}

fn guess_key(msg: &str, candidates: &[&str]) -> String {
    candidates
        .iter()
        .find(|c| msg.contains(*c))
        .unwrap_or(&candidates[0])
        .to_string()
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn key_on_line(text: &str, line: usize) -> Option<String> {
    let l = text.lines().nth(line - 1)?;
    let key = l.split('=').next()?.trim();
    (!key.is_empty() && !key.starts_with('[')).then(|| key.to_string())
}

fn find_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            l.split('=')
                .next()
                .is_some_and(|lhs| l.contains('=') && lhs.trim() == key)
        })
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        "name = \"x\"\n[data]\nmu = 1.0\nsigma2 = 0.125\npriors = [0.5, 0.3, 0.2]\n";

    #[test]
    fn defaults_fill_omitted_sections() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.spec().unwrap().d, 3);
        assert_eq!(c.run.seeds, vec![0]);
        assert_eq!(c.record_every(), 1);
        assert!(c.optimizers.is_empty());
    }

    #[test]
    fn bad_prior_sum_names_the_invariant_and_line() {
        let text = MINIMAL.replace("0.2]", "0.1]");
        match ExperimentConfig::from_toml(&text).unwrap_err() {
            Error::Config { line, key, msg } => {
                assert_eq!(line, Some(5));
                assert_eq!(key.as_deref(), Some("priors"));
                assert!(msg.contains("sum to 1"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_reported_with_its_name() {
        let text = format!("{MINIMAL}bogus = 3\n");
        match ExperimentConfig::from_toml(&text).unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key.as_deref(), Some("bogus")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn t_grid_includes_both_ends() {
        assert_eq!(parse_t_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_t_grid("0:1:0").unwrap().is_empty());
        assert!(parse_t_grid("1:0:3").is_err());
        assert!(parse_t_grid("0:1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
