//! Spectrum-aware matrix optimizers and a verifiable laboratory for their
//! training dynamics on class-imbalanced Gaussian mixtures.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, Jacobi SVD and eigensolvers, polar factors.
//! - [`data`]: the mixture model, its joint spectra and finite batches.
//! - [`optim`]: normalised steepest descent rules, momentum variants,
//!   Shampoo and Adam, gradient providers and the training loop.
//! - [`dynamics`]: closed-form trajectories and the normalised flow ODE.
//! - [`metrics`]: per-class losses, accuracy, spectral balance and the
//!   generalisation-gap condition checkers.
//! - [`harness`]: configuration, experiment execution, CSV output and the
//!   verification suites behind the `speclab` command-line tool.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use trajectory::TrajectoryRecord;
