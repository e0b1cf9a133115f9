//! Config-driven experiment runner for `coflow`.
//!
//! A TOML file describes the operator, Tikhonov schedule, dynamics and
//! output location. [`run_experiment`] integrates every configured run
//! and writes `trajectory.csv`, `diagnostics.csv`, `summary.json` and
//! `hypotheses.json` per run; [`sweep`] repeats a run over a list of
//! parameter values and aggregates fitted rates into `rates.csv`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod sweep;

pub use config::{Experiment, ExperimentConfig, RunSpec, OUTPUT_ROOT_ENV};
pub use error::{CliError, CliResult};
pub use run::{ensure_complete, execute, hypotheses_for, run_experiment, RunArtifacts, RunSummary};
pub use sweep::{parse_values, sweep, SweepOutcome, SweepParam};
