//! Two-timescale stochastic approximation of the conditioned kernel.
//!
//! The estimator walks a chain whose kernel is rebuilt on the fly from the
//! current value estimate `V` and tilt `zeta`:
//!
//! * at the current state `k` the row `p_n(k, .)` is set proportional to
//!   `exp(zeta g(k)) p(k, l) V(l) / (V(i0) V(k))` and renormalized;
//! * the next state is drawn from that row (an untilted shadow walk is
//!   advanced too, for the frequency histograms);
//! * `zeta` moves on the slow clock `b(n)` along the sampled gradient
//!   `threshold - g(next)` and is projected back onto its half-line;
//! * `V(k)` moves on its own local clock `a(visits(k))` toward
//!   `exp(zeta g(k)) / V(i0) * p(k,next) / p_n(k,next) * V(next)`, the
//!   likelihood ratio undoing the bias from sampling under `p_n`.
//!
//! At the fixed point `V` solves the multiplicative Poisson equation with
//! `V(i0) = rho`, `zeta` balances the tilted mean reward against the
//! threshold, and the rows reproduce the exact conditioned kernel.
//!
//! Runs shift `g` by an offset inside the tilt (the smallest reward on the
//! upper tail, the largest on the lower) so the exponent is never negative.
//! Rows are unchanged by the shift; `V(i0)` settles at `rho exp(-zeta offset)`.
//!
//! The threshold itself is the smoothed `c`-quantile of rewards seen during
//! a warm-start walk under the original kernel, frozen before the loop
//! starts unless continued updating is switched on.

use serde::{Deserialize, Serialize};

use crate::density::{fit_kde, KdeModel, DEFAULT_BANDWIDTH};
use crate::error::{Error, Result};
use crate::markov::{estimate_rewards_by_exploration, simulate_step, MarkovChain, Matrix};
use crate::oracle::tilt_weight;
use crate::rng::{self, Stream};
use crate::Tail;

/// Floor on `p_n(k, next)` below which the likelihood ratio is refused.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// `ln(1e30)`: tilt exponents past this get a scaling warning.
const TILT_EXPONENT_WARNING: f64 = 69.077_552_789_821_37;

/// `a(n) = k / (1 + (n+1)^0.6)` and `b(n) = k / (1 + (n+1)^0.8)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    k: f64,
}

impl StepSchedule {
    pub const FAST_EXPONENT: f64 = 0.6;
    pub const SLOW_EXPONENT: f64 = 0.8;

    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::param("k", format!("step scale must be positive, got {k}")));
        }
        Ok(StepSchedule { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Fast step `a(n)`, indexed by a state's local clock.
    pub fn fast(&self, n: u64) -> f64 {
        self.k / (1.0 + ((n + 1) as f64).powf(Self::FAST_EXPONENT))
    }

    /// Slow step `b(n)`, indexed by the global iteration.
    pub fn slow(&self, n: u64) -> f64 {
        self.k / (1.0 + ((n + 1) as f64).powf(Self::SLOW_EXPONENT))
    }
}

/// Knobs of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub schedule: StepSchedule,
    /// Quantile level of the conditioning threshold.
    pub c: f64,
    pub tail: Tail,
    /// Warm-start steps under the original kernel feeding the density fit.
    pub warm_steps: usize,
    /// Iteration cap `T`.
    pub cap: usize,
    pub bandwidth: f64,
    pub term_window: usize,
    pub term_tol: f64,
    /// Initial tilt; its sign is flipped for the lower tail.
    pub zeta0: f64,
    /// Reference state `i0`; defaults to the state the tilt favours most
    /// (largest reward for the upper tail, smallest for the lower).
    pub reference: Option<usize>,
    /// Whether the reward profile is known up front. When false it is
    /// recovered by an exploration walk before the warm start.
    pub rewards_known: bool,
    /// Keep feeding the original walk's rewards into the density and refresh
    /// the threshold every `kde_refresh` iterations.
    pub continue_kde: bool,
    pub kde_refresh: usize,
}

impl SaConfig {
    pub const DEFAULT_K: f64 = 0.5;
    pub const DEFAULT_WARM_STEPS: usize = 10_000;
    pub const DEFAULT_CAP: usize = 80_000;
    pub const DEFAULT_TERM_WINDOW: usize = 5_000;
    pub const DEFAULT_TERM_TOL: f64 = 1e-2;

    pub fn new(c: f64, k: f64) -> Result<Self> {
        let config = SaConfig {
            schedule: StepSchedule::new(k)?,
            c,
            tail: Tail::Upper,
            warm_steps: Self::DEFAULT_WARM_STEPS,
            cap: Self::DEFAULT_CAP,
            bandwidth: DEFAULT_BANDWIDTH,
            term_window: Self::DEFAULT_TERM_WINDOW,
            term_tol: Self::DEFAULT_TERM_TOL,
            zeta0: 1.0,
            reference: None,
            rewards_known: true,
            continue_kde: false,
            kde_refresh: 1_000,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::param("c", format!("must lie in (0, 1), got {}", self.c)));
        }
        // a(0) = k/2 <= 1 keeps every V update a convex combination
        if self.schedule.fast(0) > 1.0 {
            return Err(Error::param(
                "k",
                format!("first fast step {} exceeds 1", self.schedule.fast(0)),
            ));
        }
        if self.warm_steps == 0 {
            return Err(Error::param("warm_steps", "must be positive"));
        }
        if self.cap == 0 {
            return Err(Error::param("cap", "must be positive"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::param("bandwidth", format!("must be positive, got {}", self.bandwidth)));
        }
        if self.term_window < 2 {
            return Err(Error::param("term_window", "must be at least 2"));
        }
        if !(self.term_tol > 0.0) {
            return Err(Error::param("term_tol", "must be positive"));
        }
        if !(self.zeta0.is_finite() && self.zeta0 >= 0.0) {
            return Err(Error::param("zeta0", "must be a non-negative magnitude"));
        }
        if self.continue_kde && self.kde_refresh == 0 {
            return Err(Error::param("kde_refresh", "must be positive"));
        }
        Ok(())
    }

    fn reference_state(&self, chain: &MarkovChain) -> Result<usize> {
        if let Some(i0) = self.reference {
            if i0 >= chain.states() {
                return Err(Error::param("reference", format!("state {i0} out of range")));
            }
            return Ok(i0);
        }
        let g = chain.rewards();
        let pick = (0..g.len()).reduce(|best, i| match self.tail {
            Tail::Upper if g[i] > g[best] => i,
            Tail::Lower if g[i] < g[best] => i,
            _ => best,
        });
        Ok(pick.unwrap_or(0))
    }
}

/// Evolving iterate of the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaState {
    pub zeta: f64,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub p_tilt: Matrix,
    /// Local clocks: updates of `V(k)` so far.
    pub visits: Vec<u64>,
    pub iter: u64,
    pub threshold: f64,
    pub i0: usize,
    pub current_state: usize,
    /// Subtracted from `g` inside the tilt `exp(zeta (g - offset))`. Row
    /// normalization cancels it; it only rescales `V` by `exp(-zeta offset)`.
    pub reward_offset: f64,
}

impl SaState {
    /// `V = 1`, `p_n = P`, clocks at zero, walk parked at `start`.
    pub fn new(chain: &MarkovChain, threshold: f64, zeta0: f64, i0: usize, start: usize) -> Self {
        let s = chain.states();
        SaState {
            zeta: zeta0,
            v: vec![1.0; s],
            p_tilt: chain.transitions().clone(),
            visits: vec![0; s],
            iter: 0,
            threshold,
            i0,
            current_state: start,
            reward_offset: 0.0,
        }
    }

    /// Kernel built by applying the row update at every state with the
    /// current `zeta` and `V`. Rows the walk rarely reaches are stale in
    /// `p_tilt`; this view refreshes all of them at once.
    pub fn kernel_estimate(&self, chain: &MarkovChain) -> Result<Matrix> {
        (0..chain.states())
            .map(|k| tilted_row(chain, self, k))
            .collect()
    }
}

fn tilted_row(chain: &MarkovChain, state: &SaState, k: usize) -> Result<Vec<f64>> {
    let v = &state.v;
    let scale = tilt_weight(state.zeta, chain.reward(k) - state.reward_offset)? / (v[state.i0] * v[k]);
    let mut row: Vec<f64> = chain.transitions()[k]
        .iter()
        .zip(v)
        .map(|(p, vl)| scale * p * vl)
        .collect();
    let total: f64 = row.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidState(format!(
            "tilted row {k} has total mass {total}"
        )));
    }
    row.iter_mut().for_each(|x| *x /= total);
    Ok(row)
}

/// Replaces row `k` of `p_tilt` by the normalized
/// `exp(zeta g(k)) p(k,l) V(l) / (V(i0) V(k))`.
pub fn tilted_row_update(state: &mut SaState, chain: &MarkovChain, k: usize) -> Result<()> {
    state.p_tilt[k] = tilted_row(chain, state, k)?;
    Ok(())
}

/// `zeta + b (threshold - reward)`, projected onto `[0, inf)` for the upper
/// tail and `(-inf, 0]` for the lower.
pub fn slow_update(zeta: f64, b: f64, threshold: f64, reward: f64, tail: Tail) -> f64 {
    let moved = zeta + b * (threshold - reward);
    match tail {
        Tail::Upper => moved.max(0.0),
        Tail::Lower => moved.min(0.0),
    }
}

/// Moves `V(k)` toward its importance-weighted target using the step
/// indexed by `k`'s local clock, then advances that clock.
pub fn fast_update(
    state: &mut SaState,
    chain: &MarkovChain,
    k: usize,
    next: usize,
    schedule: &StepSchedule,
) -> Result<()> {
    let q = state.p_tilt[k][next];
    if !(q >= LIKELIHOOD_FLOOR) {
        return Err(Error::LikelihoodRatioOverflow { from: k, to: next, prob: q });
    }
    let a = schedule.fast(state.visits[k]);
    let ratio = chain.p(k, next) / q;
    let tilt = tilt_weight(state.zeta, chain.reward(k) - state.reward_offset)?;
    let target = tilt / state.v[state.i0] * ratio * state.v[next];
    let updated = state.v[k] + a * (target - state.v[k]);
    if !(updated > 0.0 && updated.is_finite()) {
        return Err(Error::InvalidState(format!("V({k}) left (0, inf): {updated}")));
    }
    state.v[k] = updated;
    state.visits[k] += 1;
    Ok(())
}

/// True once the last `window` values span at most `tol`.
pub fn check_termination(series: &[f64], window: usize, tol: f64) -> bool {
    if window < 2 || series.len() < window {
        return false;
    }
    let tail = &series[series.len() - window..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo <= tol
}

/// Threshold estimate produced by the warm start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub c: f64,
    pub threshold: f64,
    /// Number of reward samples behind the density fit.
    pub samples: usize,
    pub bandwidth: f64,
    /// Reward profile the estimator worked with (recovered by exploration
    /// when it was not known up front).
    pub rewards: Vec<f64>,
}

/// Per-iteration record of a run plus the final iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub zeta_series: Vec<f64>,
    /// Running mean of `g` along the tilted walk.
    pub avg_reward_series: Vec<f64>,
    /// Threshold in force at each iteration (constant unless the density
    /// keeps updating).
    pub threshold_series: Vec<f64>,
    pub threshold: f64,
    pub freq_orig: Vec<u64>,
    pub freq_tilted: Vec<u64>,
    pub terminated_at: Option<usize>,
    pub warm: WarmStart,
    pub final_state: SaState,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.zeta_series.len()
    }

    pub fn final_zeta(&self) -> f64 {
        self.final_state.zeta
    }

    /// Fractions of tilted and original visits to states whose reward is on
    /// the far side of the threshold (`>=` upper tail, `<=` lower tail).
    pub fn tail_fractions(&self, tail: Tail) -> (f64, f64) {
        let g = &self.warm.rewards;
        let beyond = |i: usize| match tail {
            Tail::Upper => g[i] >= self.threshold,
            Tail::Lower => g[i] <= self.threshold,
        };
        let frac = |counts: &[u64]| {
            let total: u64 = counts.iter().sum();
            let hit: u64 = counts.iter().enumerate().filter(|(i, _)| beyond(*i)).map(|(_, c)| c).sum();
            hit as f64 / total.max(1) as f64
        };
        (frac(&self.freq_tilted), frac(&self.freq_orig))
    }
}

/// Warm start: optional reward exploration, then `warm_steps` of the
/// original walk and a density fit whose `c`-quantile becomes the
/// threshold.
pub fn warm_start(chain: &MarkovChain, config: &SaConfig, seed: u64) -> Result<(WarmStart, KdeModel)> {
    config.validate()?;
    let s = chain.states();
    let p = chain.transitions();
    let rewards = if config.rewards_known {
        chain.rewards().to_vec()
    } else {
        let mut explore = rng::stream(seed, Stream::Exploration);
        estimate_rewards_by_exploration(
            |x, r| simulate_step(p, x, r).expect("chain rows are validated"),
            |i| chain.reward(i),
            s,
            0,
            &mut explore,
        )
    };
    let mut walk = rng::stream(seed, Stream::WarmStart);
    let mut state = 0;
    let mut samples = Vec::with_capacity(config.warm_steps);
    for _ in 0..config.warm_steps {
        state = simulate_step(p, state, &mut walk)?;
        samples.push(rewards[state]);
    }
    let kde = fit_kde(&samples, config.bandwidth)?;
    let threshold = kde.inverse_cdf(config.c)?;
    Ok((
        WarmStart {
            c: config.c,
            threshold,
            samples: samples.len(),
            bandwidth: config.bandwidth,
            rewards,
        },
        kde,
    ))
}

/// Full estimator: warm start, then iterate until the tilt settles or the
/// cap is hit.
pub fn run(chain: &MarkovChain, config: &SaConfig, seed: u64) -> Result<RunTrace> {
    let (warm, kde) = warm_start(chain, config, seed)?;
    iterate(chain, config, seed, warm, Some(kde))
}

/// Runs the loop from a finished [`warm_start`], for callers that inspect
/// the threshold before committing to the iteration.
pub fn run_after_warm_start(
    chain: &MarkovChain,
    config: &SaConfig,
    seed: u64,
    warm: WarmStart,
    kde: KdeModel,
) -> Result<RunTrace> {
    config.validate()?;
    iterate(chain, config, seed, warm, Some(kde))
}

/// Runs the loop against a given threshold, skipping the warm start.
pub fn run_with_threshold(chain: &MarkovChain, threshold: f64, config: &SaConfig, seed: u64) -> Result<RunTrace> {
    config.validate()?;
    let warm = WarmStart {
        c: config.c,
        threshold,
        samples: 0,
        bandwidth: config.bandwidth,
        rewards: chain.rewards().to_vec(),
    };
    iterate(chain, config, seed, warm, None)
}

fn iterate(
    chain: &MarkovChain,
    config: &SaConfig,
    seed: u64,
    warm: WarmStart,
    mut kde: Option<KdeModel>,
) -> Result<RunTrace> {
    let working = if config.rewards_known {
        chain.clone()
    } else {
        chain.with_rewards(warm.rewards.clone())?
    };
    let chain = &working;
    let s = chain.states();
    let p = chain.transitions();
    let i0 = config.reference_state(chain)?;
    let zeta0 = match config.tail {
        Tail::Upper => config.zeta0,
        Tail::Lower => -config.zeta0,
    };
    let mut state = SaState::new(chain, warm.threshold, zeta0, i0, i0);
    // keep the tilt exponent non-negative on both tails
    state.reward_offset = match config.tail {
        Tail::Upper => chain.min_reward(),
        Tail::Lower => chain.max_reward(),
    };
    let mut tilted_rng = rng::stream(seed, Stream::Tilted);
    let mut orig_rng = rng::stream(seed, Stream::Original);
    let mut orig_state = i0;
    let mut freq_orig = vec![0u64; s];
    let mut freq_tilted = vec![0u64; s];
    let mut zeta_series = Vec::with_capacity(config.cap);
    let mut avg_reward_series = Vec::with_capacity(config.cap);
    let mut threshold_series = Vec::with_capacity(config.cap);
    let mut reward_sum = 0.0;
    let mut terminated_at = None;
    let mut pending: Vec<f64> = Vec::new();
    let g_scale = chain.max_reward() - chain.min_reward();
    let mut scale_warned = false;

    for n in 0..config.cap {
        let k = state.current_state;
        let step = (|| -> Result<()> {
            tilted_row_update(&mut state, chain, k)?;
            let next = simulate_step(&state.p_tilt, k, &mut tilted_rng)?;
            orig_state = simulate_step(p, orig_state, &mut orig_rng)?;

            let b = config.schedule.slow(n as u64);
            let zeta_next = slow_update(state.zeta, b, state.threshold, chain.reward(next), config.tail);
            fast_update(&mut state, chain, k, next, &config.schedule)?;
            state.zeta = zeta_next;
            state.current_state = next;
            state.iter += 1;
            freq_tilted[next] += 1;
            freq_orig[orig_state] += 1;
            reward_sum += chain.reward(next);
            Ok(())
        })();
        step.map_err(|e| e.at(n))?;

        if config.continue_kde {
            if let Some(model) = kde.as_mut() {
                pending.push(chain.reward(orig_state));
                if pending.len() >= config.kde_refresh {
                    model.extend(&pending);
                    pending.clear();
                    state.threshold = model.inverse_cdf(config.c).map_err(|e| e.at(n))?;
                }
            }
        }

        if !scale_warned && state.zeta.abs() * g_scale > TILT_EXPONENT_WARNING {
            scale_warned = true;
            log::warn!(
                "tilt exponent {:.1} at iteration {n}; rescale rewards so zeta and g are of similar size",
                state.zeta.abs() * g_scale
            );
        }
        zeta_series.push(state.zeta);
        avg_reward_series.push(reward_sum / (n + 1) as f64);
        threshold_series.push(state.threshold);
        if check_termination(&zeta_series, config.term_window, config.term_tol) {
            terminated_at = Some(n + 1);
            break;
        }
    }

    Ok(RunTrace {
        zeta_series,
        avg_reward_series,
        threshold_series,
        threshold: state.threshold,
        freq_orig,
        freq_tilted,
        terminated_at,
        warm,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{generate_random_chain, linear_reward_profile, mean_row_tv, total_variation};
    use crate::oracle::acvar_oracle;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn coin() -> MarkovChain {
        MarkovChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0, 1.0]).unwrap()
    }

    fn random_chain(s: usize, max_reward: f64, seed: u64) -> MarkovChain {
        let p = generate_random_chain(s, &mut rng::stream(seed, Stream::Matrix)).unwrap();
        MarkovChain::new(p, linear_reward_profile(s, max_reward).unwrap()).unwrap()
    }

    #[test]
    fn schedule_values() {
        let sch = StepSchedule::new(0.8).unwrap();
        assert_eq!(sch.fast(0), 0.4);
        assert_eq!(sch.slow(0), 0.4);
        assert_abs_diff_eq!(sch.fast(3), 0.8 / (1.0 + 4f64.powf(0.6)), epsilon = 1e-15);
        assert!(StepSchedule::new(0.0).is_err());
        assert!(StepSchedule::new(-1.0).is_err());
        assert!(StepSchedule::new(f64::NAN).is_err());
    }

    #[test]
    fn slow_step_vanishes_relative_to_fast() {
        let sch = StepSchedule::new(1.0).unwrap();
        let ratios: Vec<f64> = [10u64, 1_000, 100_000, 10_000_000]
            .iter()
            .map(|&n| sch.slow(n) / sch.fast(n))
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        assert!(ratios[3] < 0.05);
    }

    #[test]
    fn fast_steps_are_square_summable() {
        let k = 0.7;
        let sch = StepSchedule::new(k).unwrap();
        let total: f64 = (0..1_000_000u64).map(|n| sch.fast(n).powi(2)).sum();
        assert!(total <= k * k * 6.0, "{total}");
    }

    #[test]
    fn config_validation() {
        assert!(SaConfig::new(0.9, 1.0).is_ok());
        assert!(SaConfig::new(1.0, 1.0).is_err());
        assert!(SaConfig::new(0.0, 1.0).is_err());
        // a(0) = k/2 must not exceed one
        assert!(SaConfig::new(0.9, 2.0).is_ok());
        assert!(SaConfig::new(0.9, 2.5).is_err());
        let mut cfg = SaConfig::new(0.9, 1.0).unwrap();
        cfg.term_window = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identity_tilt_keeps_original_row() {
        let chain = random_chain(5, 4.0, 3);
        let mut st = SaState::new(&chain, 0.0, 0.0, 0, 0);
        st.p_tilt[2] = vec![0.2; 5];
        tilted_row_update(&mut st, &chain, 2).unwrap();
        for (a, b) in st.p_tilt[2].iter().zip(&chain.transitions()[2]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn coin_row_update_matches_conditioned_row() {
        let chain = coin();
        let mut st = SaState::new(&chain, 0.75, 3f64.ln(), 0, 0);
        st.v = vec![1.0, 3.0];
        tilted_row_update(&mut st, &chain, 0).unwrap();
        assert_abs_diff_eq!(st.p_tilt[0][0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(st.p_tilt[0][1], 0.75, epsilon = 1e-12);
        // untouched
        assert_eq!(st.p_tilt[1], vec![0.5, 0.5]);
        let once = st.p_tilt.clone();
        tilted_row_update(&mut st, &chain, 0).unwrap();
        assert_eq!(st.p_tilt, once);
    }

    #[test]
    fn slow_update_examples() {
        assert_abs_diff_eq!(slow_update(0.5, 0.1, 2.0, 3.0, Tail::Upper), 0.4, epsilon = 1e-15);
        assert_eq!(slow_update(0.05, 0.1, 0.0, 1.0, Tail::Upper), 0.0);
        assert_eq!(slow_update(-0.05, 0.1, 1.0, 0.0, Tail::Lower), 0.0);
        assert_abs_diff_eq!(slow_update(-0.5, 0.1, 2.0, 3.0, Tail::Lower), -0.6, epsilon = 1e-15);
    }

    #[test]
    fn slow_drift_vanishes_at_optimal_tilt() {
        let chain = random_chain(6, 3.0, 11);
        let alpha = 2.0;
        let sol = acvar_oracle(&chain, alpha).unwrap();
        assert!(sol.zeta_star > 0.0);
        let b = 0.1;
        let drift: f64 = sol
            .pi_star
            .iter()
            .zip(chain.rewards())
            .map(|(w, &g)| w * (slow_update(sol.zeta_star, b, alpha, g, Tail::Upper) - sol.zeta_star))
            .sum();
        // the projection is inactive for these magnitudes
        assert!(sol.zeta_star > b * 3.0);
        assert_abs_diff_eq!(drift, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn fast_update_fixed_point_at_zero_tilt() {
        let chain = random_chain(4, 2.0, 5);
        let sch = StepSchedule::new(1.0).unwrap();
        let mut st = SaState::new(&chain, 0.0, 0.0, 0, 1);
        fast_update(&mut st, &chain, 1, 3, &sch).unwrap();
        assert_eq!(st.v, vec![1.0; 4]);
        assert_eq!(st.visits, vec![0, 1, 0, 0]);
    }

    #[test]
    fn fast_update_direct_increment() {
        let chain = coin();
        let sch = StepSchedule::new(1.0).unwrap();
        let mut st = SaState::new(&chain, 0.5, 1.0, 0, 1);
        st.visits[1] = 4;
        let a = sch.fast(4);
        fast_update(&mut st, &chain, 1, 0, &sch).unwrap();
        assert_abs_diff_eq!(st.v[1] - 1.0, a * (std::f64::consts::E - 1.0), epsilon = 1e-14);
        assert_eq!(st.v[0], 1.0);
        assert_eq!(st.visits[1], 5);
    }

    #[test]
    fn fast_drift_vanishes_at_rescaled_fixed_point() {
        let chain = random_chain(5, 2.5, 21);
        let sol = acvar_oracle(&chain, 1.8).unwrap();
        let i0 = 4;
        let sch = StepSchedule::new(1.0).unwrap();
        let mut st = SaState::new(&chain, 1.8, sol.zeta_star, i0, 0);
        st.v = sol.v_rescaled(i0);
        for k in 0..5 {
            tilted_row_update(&mut st, &chain, k).unwrap();
            for (a, b) in st.p_tilt[k].iter().zip(&sol.p_star[k]) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
        for k in 0..5 {
            let drift: f64 = (0..5)
                .map(|j| {
                    let mut trial = st.clone();
                    fast_update(&mut trial, &chain, k, j, &sch).unwrap();
                    st.p_tilt[k][j] * (trial.v[k] - st.v[k])
                })
                .sum();
            assert_abs_diff_eq!(drift, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fast_update_refuses_vanishing_likelihood() {
        let chain = coin();
        let sch = StepSchedule::new(1.0).unwrap();
        let mut st = SaState::new(&chain, 0.5, 0.0, 0, 0);
        st.p_tilt[0] = vec![1.0, 0.0];
        assert!(matches!(
            fast_update(&mut st, &chain, 0, 1, &sch),
            Err(Error::LikelihoodRatioOverflow { from: 0, to: 1, .. })
        ));
        assert_eq!(st.visits[0], 0);
    }

    #[test]
    fn termination_examples() {
        assert!(check_termination(&[2.0; 10], 10, 1e-12));
        assert!(!check_termination(&[0.5, 1.0, 1.2], 2, 0.1));
        assert!(check_termination(&[0.5, 1.0, 1.05], 2, 0.1));
        assert!(!check_termination(&[1.0; 3], 4, 1.0));
    }

    #[test]
    fn runs_are_reproducible() {
        let chain = random_chain(10, 6.0, 2);
        let mut cfg = SaConfig::new(0.9, 1.0).unwrap();
        cfg.warm_steps = 2_000;
        cfg.cap = 3_000;
        let a = run(&chain, &cfg, 17).unwrap();
        let b = run(&chain, &cfg, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.freq_tilted.iter().sum::<u64>(), a.iterations() as u64);
        assert_eq!(a.freq_orig.iter().sum::<u64>(), a.iterations() as u64);
        let (warm, kde) = warm_start(&chain, &cfg, 17).unwrap();
        assert_eq!(run_after_warm_start(&chain, &cfg, 17, warm, kde).unwrap(), a);
        let c = run(&chain, &cfg, 18).unwrap();
        assert_ne!(a.zeta_series, c.zeta_series);
    }

    #[test]
    fn threshold_below_mean_drives_tilt_to_zero() {
        let chain = random_chain(40, 6.0, 7);
        let mean = chain.stationary_mean().unwrap();
        let cfg = SaConfig::new(0.5, 1.0).unwrap();
        let trace = run_with_threshold(&chain, mean - 1.0, &cfg, 3).unwrap();
        assert!(trace.final_zeta() < 0.05, "{}", trace.final_zeta());
        let kernel = trace.final_state.kernel_estimate(&chain).unwrap();
        let worst = kernel
            .iter()
            .zip(chain.transitions())
            .map(|(a, b)| total_variation(a, b))
            .fold(0.0, f64::max);
        assert!(worst <= 0.05, "{worst}");
    }

    #[test]
    fn lower_tail_tilts_negative() {
        let chain = random_chain(40, 6.0, 7);
        let mut cfg = SaConfig::new(0.3, 0.5).unwrap();
        cfg.tail = Tail::Lower;
        let trace = run(&chain, &cfg, 4).unwrap();
        assert!(trace.zeta_series.iter().all(|&z| z <= 0.0));
        let sol = crate::oracle::acvar_oracle_tail(&chain, trace.threshold, Tail::Lower).unwrap();
        assert!(sol.zeta_star < 0.0);
        assert!(
            (trace.final_zeta() - sol.zeta_star).abs() <= 0.05f64.max(0.1 * sol.zeta_star.abs()),
            "{} vs {} after {} iterations",
            trace.final_zeta(),
            sol.zeta_star,
            trace.iterations()
        );
        let (tilted, orig) = trace.tail_fractions(Tail::Lower);
        assert!(tilted > orig);
    }

    #[test]
    fn unknown_rewards_are_explored_first() {
        let chain = random_chain(8, 6.0, 12);
        let mut cfg = SaConfig::new(0.8, 1.0).unwrap();
        cfg.rewards_known = false;
        cfg.warm_steps = 2_000;
        cfg.cap = 2_000;
        let trace = run(&chain, &cfg, 6).unwrap();
        assert_eq!(trace.warm.rewards, chain.rewards());
    }

    #[test]
    fn continued_density_refreshes_threshold() {
        let chain = random_chain(10, 6.0, 2);
        let mut cfg = SaConfig::new(0.9, 1.0).unwrap();
        cfg.warm_steps = 500;
        cfg.cap = 5_000;
        cfg.continue_kde = true;
        let trace = run(&chain, &cfg, 1).unwrap();
        let first = trace.threshold_series[0];
        assert!(trace.threshold_series.iter().any(|&t| t != first));
        assert_eq!(trace.threshold, *trace.threshold_series.last().unwrap());
    }

    #[test]
    fn state_serializes_with_named_fields() {
        let st = SaState::new(&coin(), 0.5, 1.0, 1, 0);
        let json = serde_json::to_value(&st).unwrap();
        assert!(json.get("V").is_some());
        assert!(json.get("zeta").is_some());
    }

    #[test]
    fn converges_on_small_chain() {
        let chain = random_chain(10, 6.0, 4);
        let cfg = SaConfig::new(0.9, 1.0).unwrap();
        let trace = run(&chain, &cfg, 8).unwrap();
        let sol = acvar_oracle(&chain, trace.threshold).unwrap();
        let kernel = trace.final_state.kernel_estimate(&chain).unwrap();
        assert!((trace.final_zeta() - sol.zeta_star).abs() <= 0.05f64.max(0.1 * sol.zeta_star));
        assert!(mean_row_tv(&kernel, &sol.p_star) <= 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn iterates_stay_admissible(seed in 0u64..1000, s in 2usize..12, c in 0.2f64..0.95) {
            let chain = random_chain(s, 6.0, seed);
            let mut cfg = SaConfig::new(c, 0.5).unwrap();
            cfg.warm_steps = 500;
            cfg.cap = 1_500;
            let trace = run(&chain, &cfg, seed).unwrap();
            prop_assert!(trace.zeta_series.iter().all(|&z| z >= 0.0));
            prop_assert!(trace.final_state.v.iter().all(|&v| v > 0.0 && v.is_finite()));
            for row in &trace.final_state.p_tilt {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            }
        }
    }
}
