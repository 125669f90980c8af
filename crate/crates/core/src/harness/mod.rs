//! Configuration, experiment execution, CSV outputs and verification suites.

pub mod config;
pub mod io;
pub mod runner;
pub mod verify;

pub use config::{parse_t_grid, ExperimentConfig};
pub use runner::{closed_form, simulate, spectra, ClosedFormAlgo, RunResult};
pub use verify::{Check, Suite};
