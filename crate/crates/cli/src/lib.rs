//! Reproducible runs of the portfolio pipeline: synthesize or load prices,
//! train the ensemble, backtest the results grid, and report.
//!
//! Exit codes: 0 success, 2 config, 3 data, 4 artifact mismatch, 5 integrity.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{backtest, report, synth, train, RunReport, SynthArgs};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
