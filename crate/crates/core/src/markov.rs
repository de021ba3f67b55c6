//! Finite-state Markov chains with a per-state reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Dense row-major matrix, one `Vec` per row.
pub type Matrix = Vec<Vec<f64>>;

const ROW_SUM_TOL: f64 = 1e-12;
const STEP_ROW_SUM_TOL: f64 = 1e-9;
const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_SWEEPS: usize = 1_000_000;

/// A chain on `{0, .., s-1}` with transition matrix `P` and reward `g`.
///
/// Immutable once built. Serializes as `{"s": .., "P": [[..]], "g": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainRepr", into = "ChainRepr")]
pub struct MarkovChain {
    p: Matrix,
    g: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ChainRepr {
    s: usize,
    #[serde(rename = "P")]
    p: Matrix,
    g: Vec<f64>,
}

impl TryFrom<ChainRepr> for MarkovChain {
    type Error = Error;

    fn try_from(repr: ChainRepr) -> Result<Self> {
        if repr.p.len() != repr.s {
            return Err(Error::InvalidDimension(format!(
                "declared s = {} but P has {} rows",
                repr.s,
                repr.p.len()
            )));
        }
        MarkovChain::new(repr.p, repr.g)
    }
}

impl From<MarkovChain> for ChainRepr {
    fn from(chain: MarkovChain) -> Self {
        ChainRepr {
            s: chain.p.len(),
            p: chain.p,
            g: chain.g,
        }
    }
}

impl MarkovChain {
    pub fn new(p: Matrix, g: Vec<f64>) -> Result<Self> {
        let s = p.len();
        if s == 0 {
            return Err(Error::InvalidDimension("empty transition matrix".into()));
        }
        if g.len() != s {
            return Err(Error::InvalidDimension(format!(
                "reward vector has length {} for {} states",
                g.len(),
                s
            )));
        }
        for (i, row) in p.iter().enumerate() {
            if row.len() != s {
                return Err(Error::InvalidDimension(format!(
                    "row {i} has {} entries, expected {s}",
                    row.len()
                )));
            }
            check_row(row, i, ROW_SUM_TOL)?;
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("reward of state {i} is not finite")));
        }
        Ok(MarkovChain { p, g })
    }

    /// Same transition matrix, different reward profile.
    pub fn with_rewards(&self, g: Vec<f64>) -> Result<Self> {
        MarkovChain::new(self.p.clone(), g)
    }

    pub fn states(&self) -> usize {
        self.p.len()
    }

    pub fn transitions(&self) -> &Matrix {
        &self.p
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i][j]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.g
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.g[i]
    }

    pub fn max_reward(&self) -> f64 {
        self.g.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_reward(&self) -> f64 {
        self.g.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Stationary mean of the reward under the untilted kernel.
    pub fn stationary_mean(&self) -> Result<f64> {
        Ok(stationary_distribution(&self.p)?.expectation(&self.g))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chain serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

fn check_row(row: &[f64], index: usize, tol: f64) -> Result<()> {
    let mut sum = 0.0;
    for &x in row {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidKernel { row: index, sum: f64::NAN });
        }
        sum += x;
    }
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidKernel { row: index, sum });
    }
    Ok(())
}

/// Random chain: entries `Unif(0,1) + 0.5`, rows normalized.
///
/// Every entry lands strictly inside `(1/(3s), 3/s)`.
pub fn generate_random_chain<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Result<Matrix> {
    if s < 2 {
        return Err(Error::InvalidDimension(format!("need at least 2 states, got {s}")));
    }
    let p = (0..s)
        .map(|_| {
            let raw: Vec<f64> = (0..s).map(|_| rng.gen::<f64>() + 0.5).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
        .collect();
    Ok(p)
}

/// `g(i) = max_reward * i / (s - 1)`.
pub fn linear_reward_profile(s: usize, max_reward: f64) -> Result<Vec<f64>> {
    if s < 2 {
        return Err(Error::InvalidDimension(format!("need at least 2 states, got {s}")));
    }
    if !(max_reward > 0.0 && max_reward.is_finite()) {
        return Err(Error::param("max_reward", format!("must be positive, got {max_reward}")));
    }
    let last = (s - 1) as f64;
    Ok((0..s).map(|i| max_reward * i as f64 / last).collect())
}

/// Random chain on `s` states with the linear profile topping out at
/// `max_reward`, matrix drawn from the [`Stream::Matrix`] stream of `seed`.
///
/// [`Stream::Matrix`]: crate::rng::Stream::Matrix
pub fn experiment_chain(s: usize, max_reward: f64, seed: u64) -> Result<MarkovChain> {
    let p = generate_random_chain(s, &mut rng::stream(seed, rng::Stream::Matrix))?;
    MarkovChain::new(p, linear_reward_profile(s, max_reward)?)
}

/// Independent `Unif(low, high)` reward per state.
pub fn uniform_reward_profile<R: Rng + ?Sized>(
    s: usize,
    low: f64,
    high: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if s < 1 {
        return Err(Error::InvalidDimension("need at least 1 state".into()));
    }
    if !(high > low) {
        return Err(Error::param("high", format!("must exceed low ({low}), got {high}")));
    }
    Ok((0..s).map(|_| rng.gen_range(low..high)).collect())
}

/// Draws the successor of `state` from `kernel[state]` by inverse transform.
pub fn simulate_step<R: Rng + ?Sized>(kernel: &[Vec<f64>], state: usize, rng: &mut R) -> Result<usize> {
    let row = kernel
        .get(state)
        .ok_or_else(|| Error::InvalidInput(format!("state {state} out of range")))?;
    check_row(row, state, STEP_ROW_SUM_TOL)?;
    Ok(sample_row(row, rng.gen::<f64>()))
}

/// Inverse-transform lookup of `u` in `row`. Round-off past the last
/// cumulative sum falls back to the last state with positive mass.
pub(crate) fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &q) in row.iter().enumerate() {
        acc += q;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&q| q > 0.0).unwrap_or(row.len() - 1)
}

/// A probability vector invariant under its kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
}

impl StationaryDistribution {
    pub fn expectation(&self, h: &[f64]) -> f64 {
        self.pi.iter().zip(h).map(|(p, x)| p * x).sum()
    }
}

/// `pi P` for a row vector `pi`.
pub fn left_multiply(pi: &[f64], p: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; pi.len()];
    for (w, row) in pi.iter().zip(p) {
        for (o, q) in out.iter_mut().zip(row) {
            *o += w * q;
        }
    }
    out
}

/// Fixed point of `pi -> pi P` by repeated left multiplication from the
/// uniform vector.
///
/// Fails with [`Error::ConvergenceFailure`] for reducible or periodic chains
/// that do not settle within the sweep cap.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<StationaryDistribution> {
    let s = p.len();
    if s == 0 {
        return Err(Error::InvalidDimension("empty transition matrix".into()));
    }
    let mut pi = vec![1.0 / s as f64; s];
    for _ in 0..STATIONARY_MAX_SWEEPS {
        let mut next = left_multiply(&pi, p);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change = max_abs_diff(&next, &pi);
        pi = next;
        if change < STATIONARY_TOL {
            return Ok(StationaryDistribution { pi });
        }
    }
    Err(Error::ConvergenceFailure {
        what: "stationary distribution",
        sweeps: STATIONARY_MAX_SWEEPS,
    })
}

/// Recovers the reward profile by walking the chain for `10 * s` steps.
///
/// `step` advances the walk, `reveal` reports the reward of a visited state.
/// States never visited are assigned reward zero.
pub fn estimate_rewards_by_exploration<R, F, G>(
    mut step: F,
    reveal: G,
    s: usize,
    start: usize,
    rng: &mut R,
) -> Vec<f64>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> usize,
    G: Fn(usize) -> f64,
{
    let mut g = vec![0.0; s];
    let mut seen = vec![false; s];
    let mut state = start;
    seen[state] = true;
    g[state] = reveal(state);
    for _ in 0..exploration_budget(s) {
        state = step(state, rng);
        if !seen[state] {
            seen[state] = true;
            g[state] = reveal(state);
        }
    }
    g
}

/// Number of exploration steps for `s` states.
pub fn exploration_budget(s: usize) -> usize {
    10 * s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Total-variation distance `0.5 * |a - b|_1` between two probability vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Mean row-wise total variation between two kernels.
pub fn mean_row_tv(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let total: f64 = a.iter().zip(b).map(|(x, y)| total_variation(x, y)).sum();
    total / a.len() as f64
}
