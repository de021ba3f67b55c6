//! Gaussian kernel smoothing of the stationary reward distribution.
//!
//! The reward of a finite chain takes finitely many values, so its
//! distribution function is a staircase. Smoothing every observation with a
//! narrow Gaussian gives a continuous, strictly increasing surrogate whose
//! inverse is well defined at every level `c` in `(0, 1)`. That inverse is the
//! conditioning threshold for the asymptotic CVaR.
//!
//! With a bandwidth below the smallest gap between distinct rewards the
//! smoothed density keeps one mode per reward value, so the surrogate stays
//! close to the staircase.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_BANDWIDTH: f64 = 0.02;

const BRACKET_WIDTHS: f64 = 10.0;
const BISECTION_WIDTH: f64 = 1e-10;

/// Standard normal distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Gaussian mixture fitted to reward observations.
///
/// Observations are stored as sorted `(value, multiplicity)` atoms, which is
/// exact for the mixture and keeps evaluation cost proportional to the
/// number of distinct rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    atoms: Vec<(f64, usize)>,
    bandwidth: f64,
    sample_count: usize,
}

/// Fits the mixture `CDF(x) = (1/N) sum_i Phi((x - x_i) / h)`.
pub fn fit_kde(samples: &[f64], bandwidth: f64) -> Result<KdeModel> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot fit a density to zero samples".into()));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::param("bandwidth", format!("must be positive, got {bandwidth}")));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample {x}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut atoms: Vec<(f64, usize)> = Vec::new();
    for x in sorted {
        match atoms.last_mut() {
            Some((v, n)) if *v == x => *n += 1,
            _ => atoms.push((x, 1)),
        }
    }
    let model = KdeModel {
        atoms,
        bandwidth,
        sample_count: samples.len(),
    };
    if let Some(gap) = model.min_gap() {
        if bandwidth >= gap {
            log::warn!(
                "bandwidth {bandwidth} is not below the smallest reward gap {gap}; \
                 the smoothed density loses one-mode-per-reward shape"
            );
        }
    }
    Ok(model)
}

impl KdeModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Distinct observed values with multiplicities, ascending.
    pub fn atoms(&self) -> &[(f64, usize)] {
        &self.atoms
    }

    pub fn min_sample(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max_sample(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    /// Smallest gap between distinct observed values, if there are two.
    pub fn min_gap(&self) -> Option<f64> {
        self.atoms
            .windows(2)
            .map(|w| w[1].0 - w[0].0)
            .min_by(f64::total_cmp)
    }

    /// True when the bandwidth is below every gap between distinct values.
    pub fn is_multimodal_bandwidth(&self) -> bool {
        self.min_gap().is_none_or(|gap| self.bandwidth < gap)
    }

    /// Adds observations to the fit.
    pub fn extend(&mut self, samples: &[f64]) {
        for &x in samples {
            match self.atoms.binary_search_by(|(v, _)| v.total_cmp(&x)) {
                Ok(i) => self.atoms[i].1 += 1,
                Err(i) => self.atoms.insert(i, (x, 1)),
            }
        }
        self.sample_count += samples.len();
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (below, upper, lower) = self.split(x);
        ((below as f64 - upper) + lower) / self.sample_count as f64
    }

    /// Splits the mixture at `x`: the count of atoms at or below `x`, the
    /// mass those atoms put above `x`, and the mass the remaining atoms put
    /// below `x`. Keeping the two tail masses separate preserves them where
    /// the plain sum would round to a flat value between modes.
    fn split(&self, x: f64) -> (usize, f64, f64) {
        let h = self.bandwidth;
        let mut below = 0;
        let mut upper = 0.0;
        let mut lower = 0.0;
        for &(v, n) in &self.atoms {
            if v <= x {
                below += n;
                upper += n as f64 * std_normal_cdf((v - x) / h);
            } else {
                lower += n as f64 * std_normal_cdf((x - v) / h);
            }
        }
        (below, upper, lower)
    }

    /// Whether `cdf(x) < c`, decided on the split sums.
    fn below_level(&self, x: f64, c: f64) -> bool {
        let (below, upper, lower) = self.split(x);
        lower - upper < c * self.sample_count as f64 - below as f64
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (h * (2.0 * PI).sqrt());
        let total: f64 = self
            .atoms
            .iter()
            .map(|&(v, n)| {
                let z = (x - v) / h;
                n as f64 * (-0.5 * z * z).exp()
            })
            .sum();
        norm * total / self.sample_count as f64
    }

    /// The `x` with `cdf(x) = c`, by bisection on
    /// `[min - 10h, max + 10h]` down to a bracket narrower than `1e-10`.
    pub fn inverse_cdf(&self, c: f64) -> Result<f64> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::param("c", format!("must lie in (0, 1), got {c}")));
        }
        let pad = BRACKET_WIDTHS * self.bandwidth;
        let mut lo = self.min_sample() - pad;
        let mut hi = self.max_sample() + pad;
        while hi - lo >= BISECTION_WIDTH {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.below_level(mid, c) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}
