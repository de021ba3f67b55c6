//! One experiment: build the chain, run the exact oracle and the estimator
//! on it, and write plot-ready data.

use std::fs;
use std::path::{Path, PathBuf};

use acvar::markov::{generate_random_chain, linear_reward_profile, mean_row_tv, uniform_reward_profile};
use acvar::oracle::mc::{mc_conditioning_oracle, McConditioning};
use acvar::oracle::{acvar_oracle_tail, OracleSolution};
use acvar::rng::{stream, Stream};
use acvar::sa::{self, RunTrace};
use acvar::{MarkovChain, Matrix, Tail};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RewardProfile};

pub const TRACE_FILE: &str = "trace.csv";
pub const FREQ_FILE: &str = "freq.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHAIN_FILE: &str = "chain.json";

/// Builds the instance: matrix from the seed's matrix stream, rewards per
/// the configured profile.
pub fn build_chain(config: &ExperimentConfig) -> Result<MarkovChain> {
    let s = config.states;
    let p = generate_random_chain(s, &mut stream(config.seed, Stream::Matrix))?;
    let g = match config.reward_profile {
        RewardProfile::Linear => linear_reward_profile(s, config.max_reward)?,
        RewardProfile::Uniform => {
            uniform_reward_profile(s, 0.0, config.max_reward, &mut stream(config.seed, Stream::Rewards))?
        }
        RewardProfile::File => {
            let path = config.reward_file.as_deref().context("no reward file given")?;
            let g = read_rewards(path)?;
            if g.len() != s {
                bail!("{} lists {} rewards for {s} states", path.display(), g.len());
            }
            g
        }
    };
    Ok(MarkovChain::new(p, g)?)
}

/// Rewards as a JSON array or numbers separated by whitespace or commas.
pub fn read_rewards(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading rewards {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("parsing rewards {}", path.display()));
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("parsing reward {t:?} in {}", path.display()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeSummary {
    pub c: f64,
    /// Smoothed quantile used as the threshold.
    pub threshold: f64,
    pub samples: usize,
    pub bandwidth: f64,
    /// Whether the bandwidth is below every gap between distinct rewards.
    pub below_reward_gap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub zeta_star: f64,
    pub rho_star: f64,
    pub acvar: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub zeta_final: f64,
    pub zeta_abs_error: f64,
    pub iterations: usize,
    pub terminated_at: Option<usize>,
    /// Mean over rows of the total variation between the estimated and the
    /// exact conditioned kernel.
    pub mean_row_tv_to_oracle: f64,
    /// Same distance to the original kernel.
    pub mean_row_tv_to_original: f64,
    pub avg_reward_tilted: f64,
    /// Share of visits beyond the threshold, tilted and original walks.
    pub tail_fraction_tilted: f64,
    pub tail_fraction_original: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n: usize,
    pub num_paths: usize,
    pub accepted: usize,
    pub max_row_tv_to_oracle: f64,
    pub row_tv_to_oracle: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub stationary_mean: f64,
    pub kde: KdeSummary,
    pub oracle: OracleSummary,
    pub estimator: EstimatorSummary,
    pub mc: Option<McSummary>,
}

/// Everything computed for one experiment, before anything is written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub chain: MarkovChain,
    pub trace: RunTrace,
    pub solution: OracleSolution,
    pub kernel: Matrix,
    pub mc: Option<McConditioning>,
    pub summary: Summary,
}

pub fn compute(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let chain = build_chain(config)?;
    let tail: Tail = config.tail.into();
    let sa_config = config.sa_config()?;
    let (warm, kde) = sa::warm_start(&chain, &sa_config, config.seed).context("warm start")?;
    // fail on an unattainable threshold before spending the iteration budget
    let solution = acvar_oracle_tail(&chain, warm.threshold, tail).context("exact oracle")?;
    let trace = sa::run_after_warm_start(&chain, &sa_config, config.seed, warm, kde)
        .context("stochastic approximation")?;
    log::info!(
        "seed {}: {} iterations, zeta {:.4}",
        config.seed,
        trace.iterations(),
        trace.final_zeta()
    );
    let kernel = trace.final_state.kernel_estimate(&chain)?;

    let mc = if config.mc_oracle {
        // the lower tail is the upper tail of the negated rewards
        let (target, alpha) = match tail {
            Tail::Upper => (chain.clone(), trace.threshold),
            Tail::Lower => (
                chain.with_rewards(chain.rewards().iter().map(|g| -g).collect())?,
                -trace.threshold,
            ),
        };
        let mut rng = stream(config.seed, Stream::MonteCarlo);
        Some(mc_conditioning_oracle(&target, alpha, config.mc_n, config.mc_paths, &mut rng).context("Monte Carlo oracle")?)
    } else {
        None
    };

    let (tail_tilted, tail_orig) = trace.tail_fractions(tail);
    let summary = Summary {
        config: config.clone(),
        stationary_mean: chain.stationary_mean()?,
        kde: KdeSummary {
            c: trace.warm.c,
            threshold: trace.warm.threshold,
            samples: trace.warm.samples,
            bandwidth: trace.warm.bandwidth,
            below_reward_gap: below_reward_gap(chain.rewards(), trace.warm.bandwidth),
        },
        oracle: OracleSummary {
            zeta_star: solution.zeta_star,
            rho_star: solution.rho_star,
            acvar: solution.acvar,
            alpha: solution.alpha,
        },
        estimator: EstimatorSummary {
            zeta_final: trace.final_zeta(),
            zeta_abs_error: (trace.final_zeta() - solution.zeta_star).abs(),
            iterations: trace.iterations(),
            terminated_at: trace.terminated_at,
            mean_row_tv_to_oracle: mean_row_tv(&kernel, &solution.p_star),
            mean_row_tv_to_original: mean_row_tv(&kernel, chain.transitions()),
            avg_reward_tilted: trace.avg_reward_series.last().copied().unwrap_or(f64::NAN),
            tail_fraction_tilted: tail_tilted,
            tail_fraction_original: tail_orig,
        },
        mc: mc.as_ref().map(|m| McSummary {
            n: config.mc_n,
            num_paths: m.num_paths,
            accepted: m.accepted,
            max_row_tv_to_oracle: m.max_row_tv(&solution.p_star),
            row_tv_to_oracle: m.row_tvs(&solution.p_star),
        }),
    };
    Ok(Outcome {
        chain,
        trace,
        solution,
        kernel,
        mc,
        summary,
    })
}

fn below_reward_gap(g: &[f64], bandwidth: f64) -> bool {
    let mut sorted = g.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.windows(2).all(|w| w[1] - w[0] > bandwidth)
}

#[derive(Serialize)]
struct TraceRow {
    iter: usize,
    zeta: f64,
    running_avg_reward_tilted: f64,
    threshold: f64,
}

#[derive(Serialize)]
struct FreqRow {
    state: usize,
    reward: f64,
    count_orig: u64,
    count_tilted: u64,
}

pub fn trace_csv(trace: &RunTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, ((&zeta, &avg), &threshold)) in trace
        .zeta_series
        .iter()
        .zip(&trace.avg_reward_series)
        .zip(&trace.threshold_series)
        .enumerate()
    {
        w.serialize(TraceRow {
            iter: i + 1,
            zeta,
            running_avg_reward_tilted: avg,
            threshold,
        })?;
    }
    Ok(w.into_inner()?)
}

/// Visit counts per state, states in increasing order of reward.
pub fn freq_csv(trace: &RunTrace) -> Result<Vec<u8>> {
    let g = &trace.warm.rewards;
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[a].total_cmp(&g[b]));
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in order {
        w.serialize(FreqRow {
            state: i,
            reward: g[i],
            count_orig: trace.freq_orig[i],
            count_tilted: trace.freq_tilted[i],
        })?;
    }
    Ok(w.into_inner()?)
}

/// Writes the artifacts of `outcome` into `dir`. On failure the files this
/// call already wrote are removed.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<(&str, Vec<u8>)> = vec![
        (TRACE_FILE, trace_csv(&outcome.trace)?),
        (FREQ_FILE, freq_csv(&outcome.trace)?),
        (SUMMARY_FILE, pretty_json(&outcome.summary)?),
        (CHAIN_FILE, outcome.chain.to_json().into_bytes()),
    ];
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for done in &written {
                let _ = fs::remove_file(done);
            }
            let _ = fs::remove_file(&path);
            return Err(e).with_context(|| format!("writing {}", path.display()));
        }
        written.push(path);
    }
    Ok(written)
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Computes and writes one experiment into its configured directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary> {
    let outcome = compute(config)?;
    write_outputs(&outcome, &config.output_dir)?;
    Ok(outcome.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigArgs;

    fn small(states: usize) -> ExperimentConfig {
        ConfigArgs {
            states: Some(states),
            warm_steps: Some(2_000),
            cap: Some(3_000),
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn freq_rows_follow_rewards() {
        let mut cfg = small(6);
        cfg.reward_profile = RewardProfile::Uniform;
        let outcome = compute(&cfg).unwrap();
        let text = String::from_utf8(freq_csv(&outcome.trace).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("state,reward,count_orig,count_tilted"));
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 6);
        assert!(rows.windows(2).all(|w| w[0][1] <= w[1][1]));
        let tilted: f64 = rows.iter().map(|r| r[3]).sum();
        assert_eq!(tilted as usize, outcome.trace.iterations());
    }

    #[test]
    fn trace_header_and_length() {
        let outcome = compute(&small(5)).unwrap();
        let text = String::from_utf8(trace_csv(&outcome.trace).unwrap()).unwrap();
        assert!(text.starts_with("iter,zeta,running_avg_reward_tilted,threshold\n"));
        assert_eq!(text.lines().count(), outcome.trace.iterations() + 1);
    }

    #[test]
    fn reward_lists_parse_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.txt");
        fs::write(&a, "[0, 1.5, 3]").unwrap();
        fs::write(&b, "0\n1.5, 3\n").unwrap();
        assert_eq!(read_rewards(&a).unwrap(), vec![0.0, 1.5, 3.0]);
        assert_eq!(read_rewards(&b).unwrap(), vec![0.0, 1.5, 3.0]);
        fs::write(&b, "0 x").unwrap();
        assert!(read_rewards(&b).is_err());
    }

    #[test]
    fn reward_file_length_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        fs::write(&path, "0 1 2").unwrap();
        let mut cfg = small(4);
        cfg.reward_profile = RewardProfile::File;
        cfg.reward_file = Some(path);
        assert!(build_chain(&cfg).is_err());
    }

    #[test]
    fn gap_check() {
        assert!(below_reward_gap(&[0.0, 0.1, 0.1, 0.3], 0.02));
        assert!(!below_reward_gap(&[0.0, 0.01, 0.3], 0.02));
    }
}
