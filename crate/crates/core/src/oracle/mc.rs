//! Rejection sampling of finite paths conditioned on a high average reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{sample_row, stationary_distribution, total_variation, MarkovChain, Matrix};

/// Empirical transition law of accepted paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConditioning {
    /// Row-normalized transition counts; rows with no visits are all zero.
    pub kernel: Matrix,
    /// Whether each row saw at least one transition.
    pub defined: Vec<bool>,
    pub row_counts: Vec<u64>,
    pub accepted: usize,
    pub num_paths: usize,
}

impl McConditioning {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.num_paths as f64
    }

    /// Largest row-wise total variation against `reference`, over defined rows.
    pub fn max_row_tv(&self, reference: &[Vec<f64>]) -> f64 {
        self.row_tvs(reference).into_iter().flatten().fold(0.0, f64::max)
    }

    /// Row-wise total variation, `None` for undefined rows.
    pub fn row_tvs(&self, reference: &[Vec<f64>]) -> Vec<Option<f64>> {
        self.kernel
            .iter()
            .zip(reference)
            .zip(&self.defined)
            .map(|((a, b), &d)| d.then(|| total_variation(a, b)))
            .collect()
    }
}

/// Simulates `num_paths` paths of `n` states under `P`, each started from the
/// stationary law, keeps those whose average reward is at least `alpha`, and
/// tallies their transitions.
pub fn mc_conditioning_oracle<R: Rng + ?Sized>(
    chain: &MarkovChain,
    alpha: f64,
    n: usize,
    num_paths: usize,
    rng: &mut R,
) -> Result<McConditioning> {
    if n < 2 {
        return Err(Error::param("n", format!("path length must be at least 2, got {n}")));
    }
    if num_paths == 0 {
        return Err(Error::param("num_paths", "must be positive"));
    }
    let s = chain.states();
    let p = chain.transitions();
    let start = stationary_distribution(p)?.pi;
    let mut counts = vec![vec![0u64; s]; s];
    let mut path = vec![0usize; n];
    let mut accepted = 0;
    let threshold = alpha * n as f64;

    for _ in 0..num_paths {
        path[0] = sample_row(&start, rng.gen());
        let mut total = chain.reward(path[0]);
        for t in 1..n {
            path[t] = sample_row(&p[path[t - 1]], rng.gen());
            total += chain.reward(path[t]);
        }
        if total >= threshold {
            accepted += 1;
            for w in path.windows(2) {
                counts[w[0]][w[1]] += 1;
            }
        }
    }
    if accepted == 0 {
        return Err(Error::NoAcceptance { n, num_paths });
    }

    let row_counts: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let kernel = counts
        .iter()
        .zip(&row_counts)
        .map(|(row, &total)| {
            if total == 0 {
                vec![0.0; s]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(McConditioning {
        kernel,
        defined: row_counts.iter().map(|&c| c > 0).collect(),
        row_counts,
        accepted,
        num_paths,
    })
}
