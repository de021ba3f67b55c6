//! Experiment configuration from flags, a JSON file, or a `key=value` file.
//!
//! All three sources parse into [`ConfigArgs`], whose fields are optional so
//! that a file can be overlaid by flags. [`ConfigArgs::resolve`] fills in
//! defaults and validates the result.

use std::fs;
use std::path::{Path, PathBuf};

use acvar::density::DEFAULT_BANDWIDTH;
use acvar::{SaConfig, Tail};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, ValueEnum};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_REWARD: f64 = 6.0;
/// Upper end of the uniform profile when `max_reward` is unset.
pub const DEFAULT_UNIFORM_HIGH: f64 = 4.0;
pub const DEFAULT_MC_N: usize = 20;
pub const DEFAULT_MC_PATHS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailArg {
    #[default]
    Upper,
    Lower,
}

impl From<TailArg> for Tail {
    fn from(t: TailArg) -> Tail {
        match t {
            TailArg::Upper => Tail::Upper,
            TailArg::Lower => Tail::Lower,
        }
    }
}

/// How per-state rewards are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardProfile {
    /// `max_reward * i / (states - 1)`.
    #[default]
    Linear,
    /// Independent `Unif(0, max_reward)` draws; `max_reward` defaults to 4 here.
    Uniform,
    /// Read from `reward_file`.
    File,
}

/// Experiment settings; every field may be left unset.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigArgs {
    /// Number of states (required).
    #[arg(long)]
    pub states: Option<usize>,
    /// Seed for the chain and every simulation stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quantile level of the threshold, in (0, 1).
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, value_enum)]
    pub tail: Option<TailArg>,
    #[arg(long, value_enum)]
    pub reward_profile: Option<RewardProfile>,
    /// Reward list for the `file` profile: a JSON array or numbers separated
    /// by whitespace or commas.
    #[arg(long)]
    pub reward_file: Option<PathBuf>,
    #[arg(long)]
    pub max_reward: Option<f64>,
    /// Kernel density bandwidth.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub warm_steps: Option<usize>,
    /// Iteration cap.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Step-size scale `k`.
    #[arg(long)]
    pub k_scale: Option<f64>,
    #[arg(long)]
    pub term_window: Option<usize>,
    #[arg(long)]
    pub term_tol: Option<f64>,
    /// Initial tilt magnitude.
    #[arg(long)]
    pub zeta0: Option<f64>,
    /// Recover the rewards by an exploration walk instead of reading them.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub explore_rewards: Option<bool>,
    /// Also run the rejection-sampling oracle.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub mc_oracle: Option<bool>,
    /// Path length for the rejection-sampling oracle.
    #[arg(long)]
    pub mc_n: Option<usize>,
    #[arg(long)]
    pub mc_paths: Option<usize>,
    /// Output directory.
    #[arg(long = "out")]
    #[serde(alias = "out")]
    pub output_dir: Option<PathBuf>,
}

/// Parser used to read `key=value` files through the flag grammar.
#[derive(Debug, Parser)]
#[command(no_binary_name = true)]
struct FileFlags {
    #[command(flatten)]
    args: ConfigArgs,
}

/// A fully specified, validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub states: usize,
    pub seed: u64,
    pub c: f64,
    pub tail: TailArg,
    pub reward_profile: RewardProfile,
    pub reward_file: Option<PathBuf>,
    pub max_reward: f64,
    pub bandwidth: f64,
    pub warm_steps: usize,
    pub cap: usize,
    pub k_scale: f64,
    pub term_window: usize,
    pub term_tol: f64,
    pub zeta0: f64,
    pub explore_rewards: bool,
    pub mc_oracle: bool,
    pub mc_n: usize,
    pub mc_paths: usize,
    pub output_dir: PathBuf,
}

impl ConfigArgs {
    /// Reads a config file: JSON if it starts with `{`, otherwise one
    /// `key=value` per line (`#` starts a comment).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(text)?);
        }
        let mut argv = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key=value, got {line:?}", n + 1);
            };
            let key = match key.trim() {
                "output_dir" => "out".to_string(),
                k => k.replace('_', "-"),
            };
            argv.push(format!("--{key}"));
            argv.push(value.trim().to_string());
        }
        let parsed = FileFlags::try_parse_from(argv).map_err(|e| anyhow::anyhow!("{}", e.render().to_string().trim()))?;
        Ok(parsed.args)
    }

    /// Fields set in `other` win.
    pub fn overlay(self, other: ConfigArgs) -> ConfigArgs {
        ConfigArgs {
            states: other.states.or(self.states),
            seed: other.seed.or(self.seed),
            c: other.c.or(self.c),
            tail: other.tail.or(self.tail),
            reward_profile: other.reward_profile.or(self.reward_profile),
            reward_file: other.reward_file.or(self.reward_file),
            max_reward: other.max_reward.or(self.max_reward),
            bandwidth: other.bandwidth.or(self.bandwidth),
            warm_steps: other.warm_steps.or(self.warm_steps),
            cap: other.cap.or(self.cap),
            k_scale: other.k_scale.or(self.k_scale),
            term_window: other.term_window.or(self.term_window),
            term_tol: other.term_tol.or(self.term_tol),
            zeta0: other.zeta0.or(self.zeta0),
            explore_rewards: other.explore_rewards.or(self.explore_rewards),
            mc_oracle: other.mc_oracle.or(self.mc_oracle),
            mc_n: other.mc_n.or(self.mc_n),
            mc_paths: other.mc_paths.or(self.mc_paths),
            output_dir: other.output_dir.or(self.output_dir),
        }
    }

    /// Applies defaults and validates.
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let Some(states) = self.states else {
            bail!("missing required field `states`");
        };
        let reward_profile = self.reward_profile.unwrap_or_default();
        let config = ExperimentConfig {
            states,
            seed: self.seed.unwrap_or(1),
            c: self.c.unwrap_or(0.9),
            tail: self.tail.unwrap_or_default(),
            reward_profile,
            reward_file: self.reward_file,
            max_reward: self.max_reward.unwrap_or(match reward_profile {
                RewardProfile::Uniform => DEFAULT_UNIFORM_HIGH,
                _ => DEFAULT_MAX_REWARD,
            }),
            bandwidth: self.bandwidth.unwrap_or(DEFAULT_BANDWIDTH),
            warm_steps: self.warm_steps.unwrap_or(SaConfig::DEFAULT_WARM_STEPS),
            cap: self.cap.unwrap_or(SaConfig::DEFAULT_CAP),
            k_scale: self.k_scale.unwrap_or(SaConfig::DEFAULT_K),
            term_window: self.term_window.unwrap_or(SaConfig::DEFAULT_TERM_WINDOW),
            term_tol: self.term_tol.unwrap_or(SaConfig::DEFAULT_TERM_TOL),
            zeta0: self.zeta0.unwrap_or(1.0),
            explore_rewards: self.explore_rewards.unwrap_or(false),
            mc_oracle: self.mc_oracle.unwrap_or(false),
            mc_n: self.mc_n.unwrap_or(DEFAULT_MC_N),
            mc_paths: self.mc_paths.unwrap_or(DEFAULT_MC_PATHS),
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        };
        config.validate()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states < 2 {
            bail!("invalid `states`: need at least 2, got {}", self.states);
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            bail!("invalid `c`: must lie in (0, 1), got {}", self.c);
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            bail!("invalid `bandwidth`: must be positive, got {}", self.bandwidth);
        }
        if self.warm_steps < self.states {
            bail!(
                "invalid `warm_steps`: must be at least `states` ({}), got {}",
                self.states,
                self.warm_steps
            );
        }
        if self.cap < 1 {
            bail!("invalid `cap`: must be at least 1");
        }
        if !(self.max_reward > 0.0 && self.max_reward.is_finite()) {
            bail!("invalid `max_reward`: must be positive, got {}", self.max_reward);
        }
        if self.reward_profile == RewardProfile::File && self.reward_file.is_none() {
            bail!("missing `reward_file` for the file reward profile");
        }
        if self.mc_oracle && (self.mc_n < 2 || self.mc_paths == 0) {
            bail!("invalid `mc_n`/`mc_paths`: need n >= 2 and at least one path");
        }
        self.sa_config()
            .map(|_| ())
            .map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))
    }

    /// Estimator settings derived from this experiment.
    pub fn sa_config(&self) -> acvar::Result<SaConfig> {
        let mut sa = SaConfig::new(self.c, self.k_scale)?;
        sa.tail = self.tail.into();
        sa.warm_steps = self.warm_steps;
        sa.cap = self.cap;
        sa.bandwidth = self.bandwidth;
        sa.term_window = self.term_window;
        sa.term_tol = self.term_tol;
        sa.zeta0 = self.zeta0;
        sa.rewards_known = !self.explore_rewards;
        sa.validate()?;
        Ok(sa)
    }
}
