//! Experiment runner for the `acvar` estimators.
//!
//! An experiment builds a seeded random chain, runs the exact oracle and the
//! stochastic approximation on it (optionally the rejection-sampling oracle
//! too), and writes `trace.csv`, `freq.csv`, `summary.json` and
//! `chain.json`.

pub mod config;
pub mod experiment;
pub mod sweep;

pub use config::{ConfigArgs, ExperimentConfig};
pub use experiment::{compute, run_experiment, write_outputs, Outcome, Summary};
