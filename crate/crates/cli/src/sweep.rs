//! Independent runs over a range of seeds.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::experiment::{run_experiment, Summary};

/// Inclusive seed range written `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

impl FromStr for SeedRange {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((a, b)) = s.split_once("..") else {
            bail!("expected a..b, got {s:?}");
        };
        let first: u64 = a.trim().parse()?;
        let last: u64 = b.trim().parse()?;
        if last < first {
            bail!("empty seed range {s:?}");
        }
        Ok(SeedRange { first, last })
    }
}

impl SeedRange {
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.first..=self.last
    }
}

/// Per-seed copy of `base`, writing into `<out>/seed-<n>`.
pub fn seed_config(base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.output_dir = base.output_dir.join(format!("seed-{seed}"));
    cfg
}

/// Runs every seed in parallel; results come back in seed order.
pub fn run_sweep(base: &ExperimentConfig, range: SeedRange) -> Vec<(u64, PathBuf, Result<Summary>)> {
    let configs: Vec<ExperimentConfig> = range.seeds().map(|s| seed_config(base, s)).collect();
    configs
        .into_par_iter()
        .map(|cfg| {
            let result = run_experiment(&cfg);
            (cfg.seed, cfg.output_dir, result)
        })
        .collect()
}
