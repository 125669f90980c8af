//! Command-line front end: spectra, closed-form trajectories, simulations,
//! verification suites and loss summaries.
//!
//! Exit codes: 0 on success, 1 on runtime failures or failed checks, 2 on
//! configuration errors.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use speclab::harness::config::parse_t_grid;
use speclab::harness::runner::{self, ClosedFormAlgo};
use speclab::harness::{io, ExperimentConfig, Suite};
use speclab::optim::Rule;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "speclab",
    version,
    about = "Spectral descent under class imbalance: closed forms, simulations and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the joint spectra and theorem conditions; write spectra.csv.
    Spectra {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write analytic trajectories to trajectory.csv.
    ClosedForm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated families among gd, gf, specgd, specgf, ngf, bilinear, deep.
        #[arg(long)]
        algos: Option<String>,
        /// Time grid `start:stop:count`.
        #[arg(long = "t-grid")]
        t_grid: Option<String>,
    },
    /// Run the configured optimizers; write trajectory.csv, losses.csv and manifests.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds overriding the configuration.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Run a verification suite and print one line per check.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Summarise losses.csv of an output directory into summary.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .chain()
                .filter_map(|c| c.downcast_ref::<speclab::Error>())
                .any(speclab::Error::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn out_dir(out: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    out.unwrap_or_else(|| config.run.output_dir.clone())
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Spectra { config, out } => {
            let config = load(&config)?;
            let report = runner::spectra(&config)?;
            print!("{}", report.table());
            let path = out_dir(out, &config).join("spectra.csv");
            io::write_spectra(&path, &report.profile)?;
            eprintln!("wrote {}", path.display());
        }
        Command::ClosedForm {
            config,
            out,
            algos,
            t_grid,
        } => {
            let config = load(&config)?;
            let algos = match algos {
                Some(list) => ClosedFormAlgo::parse_list(&list)?,
                None => default_algos(&config),
            };
            let grid = t_grid.as_deref().map(parse_t_grid).transpose()?;
            let output = runner::closed_form(&config, &algos, grid.as_deref())?;
            for w in &output.warnings {
                eprintln!("warning: {w}");
            }
            let dir = out_dir(out, &config);
            let runs: Vec<(String, &speclab::TrajectoryRecord)> = output
                .records
                .iter()
                .map(|(id, r)| (id.clone(), r))
                .collect();
            io::write_trajectory(&dir.join("trajectory.csv"), &runs)?;
            if !output.gaps.is_empty() {
                io::write_saturation_gap(&dir.join("saturation_gap.csv"), &output.gaps)?;
            }
            eprintln!(
                "wrote {} closed-form trajectories to {}",
                runs.len(),
                dir.display()
            );
        }
        Command::Simulate { config, out, seeds } => {
            let mut config = load(&config)?;
            if let Some(list) = seeds {
                config.run.seeds = parse_seeds(&list)?;
                config.validate()?;
            }
            let results = runner::simulate(&config)?;
            let dir = out_dir(out, &config);
            runner::write_simulation(&dir, &results)?;
            for r in &results {
                for w in &r.manifest.warnings {
                    eprintln!("warning: {}: {w}", r.manifest.run_id);
                }
                eprintln!(
                    "{}: {} steps{}",
                    r.manifest.run_id,
                    r.manifest.steps_taken,
                    if r.manifest.stopped_early {
                        " (gradient stop)"
                    } else {
                        ""
                    }
                );
            }
            eprintln!("wrote {} runs to {}", results.len(), dir.display());
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let checks = suite.run()?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            for c in &checks {
                println!("{c}");
            }
            println!("{} checks, {} failed", checks.len(), failed);
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { out } => {
            let rows = io::read_losses(&out.join("losses.csv"))?;
            let summary = runner::report(&rows);
            let path = out.join("summary.csv");
            write_summary(&path, &summary)
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "{:<40} {:>8} {:>10} {:>12} {:>12} {:>10} {:>10}",
                "run_id", "algo", "final", "bal_loss", "worst_loss", "best_bal", "best_worst"
            );
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
            for s in &summary {
                println!(
                    "{:<40} {:>8} {:>10} {:>12.6} {:>12.6} {:>10} {:>10}",
                    s.run_id,
                    s.algo,
                    s.final_step,
                    s.final_balanced_loss,
                    s.final_worst_loss,
                    opt(s.best_balanced_accuracy),
                    opt(s.best_worst_accuracy)
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Families computable from the configuration alone.
fn default_algos(config: &ExperimentConfig) -> Vec<ClosedFormAlgo> {
    let has = |rule: Rule| config.optimizers.iter().any(|o| o.rule == rule);
    let mut algos = Vec::new();
    if config.model.deep_init().ok().flatten().is_some() {
        if has(Rule::SpecGd) {
            algos.push(match config.model.deep_init() {
                Ok(Some(d)) if d.depth == 2 => ClosedFormAlgo::Bilinear,
                _ => ClosedFormAlgo::Deep,
            });
        }
        return algos;
    }
    if has(Rule::Gd) {
        algos.push(ClosedFormAlgo::Gd);
    }
    if has(Rule::SpecGd) {
        algos.push(ClosedFormAlgo::SpecGd);
    }
    algos.extend([
        ClosedFormAlgo::Gf,
        ClosedFormAlgo::SpecGf,
        ClosedFormAlgo::Ngf,
    ]);
    algos
}

fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>().map_err(|_| {
                speclab::Error::Config {
                    line: None,
                    key: Some("seeds".into()),
                    msg: format!("seed `{s}` is not an unsigned integer"),
                }
                .into()
            })
        })
        .collect()
}

fn write_summary(path: &Path, summary: &[runner::RunSummary]) -> Result<()> {
    let mut text = String::from(
        "run_id,algo,final_step,final_balanced_loss,final_worst_loss,best_balanced_accuracy,best_worst_accuracy\n",
    );
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for s in summary {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.run_id,
            s.algo,
            s.final_step,
            s.final_balanced_loss,
            s.final_worst_loss,
            opt(s.best_balanced_accuracy),
            opt(s.best_worst_accuracy)
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}
