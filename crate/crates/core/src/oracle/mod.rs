//! Exact ground truth for the tilted chain.
//!
//! For a tilt `zeta` the matrix `M(i,j) = exp(zeta g(i)) p(i,j)` is
//! non-negative and, for an irreducible chain, has a Perron pair
//! `M V = rho V` with `V > 0`. Its logarithm `ln rho(zeta)` is the scaled
//! cumulant generating function of the reward sum, a convex function of
//! `zeta` whose slope is the stationary mean of `g` under the kernel
//!
//! ```text
//! p_zeta(i,j) = exp(zeta g(i)) p(i,j) V(j) / (rho V(i))
//! ```
//!
//! Conditioning the long-run average on `>= alpha` selects the tilt at which
//! that slope equals `alpha` (or no tilt at all when `alpha` is already below
//! the mean). The asymptotic CVaR is the stationary mean of `g` under the
//! selected kernel.
//!
//! Everything here is deterministic; [`mc`] holds the brute-force rejection
//! check on finite paths.

pub mod mc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{stationary_distribution, MarkovChain, Matrix};
use crate::Tail;

pub use mc::{mc_conditioning_oracle, McConditioning};

const PERRON_TOL: f64 = 1e-12;
const PERRON_MAX_SWEEPS: usize = 1_000_000;
const ZETA_BRACKET_WIDTH: f64 = 1e-10;
/// Largest `|zeta * g|` the doubling search may reach before giving up.
const MAX_EXPONENT: f64 = 700.0;
const KERNEL_ROW_TOL: f64 = 1e-8;

/// Perron eigenvalue and eigenvector, scaled so that `v[i0] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronPair {
    pub rho: f64,
    pub v: Vec<f64>,
    pub i0: usize,
}

impl PerronPair {
    /// `|M v - rho v|_inf / (rho |v|_inf)`.
    pub fn relative_residual(&self, m: &[Vec<f64>]) -> f64 {
        let scale = self.v.iter().copied().fold(0.0, f64::max);
        let err = m
            .iter()
            .zip(&self.v)
            .map(|(row, vi)| (dot(row, &self.v) - self.rho * vi).abs())
            .fold(0.0, f64::max);
        err / (self.rho * scale)
    }
}

/// `M(i,j) = exp(zeta g(i)) p(i,j)`.
pub fn tilted_matrix(chain: &MarkovChain, zeta: f64) -> Result<Matrix> {
    if !zeta.is_finite() {
        return Err(Error::param("zeta", format!("must be finite, got {zeta}")));
    }
    chain
        .transitions()
        .iter()
        .zip(chain.rewards())
        .map(|(row, &g)| {
            let w = tilt_weight(zeta, g)?;
            Ok(row.iter().map(|p| w * p).collect())
        })
        .collect()
}

/// `exp(zeta g)`, rejecting overflow and underflow to zero.
pub(crate) fn tilt_weight(zeta: f64, g: f64) -> Result<f64> {
    let w = (zeta * g).exp();
    if w.is_finite() && w > 0.0 {
        Ok(w)
    } else {
        Err(Error::TiltOverflow { zeta, reward: g })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Power iteration from the all-ones vector, renormalized by component `i0`
/// every sweep, until successive iterates agree to `1e-12` relative to their
/// largest entry.
pub fn perron_pair(m: &[Vec<f64>], i0: usize) -> Result<PerronPair> {
    let s = m.len();
    if s == 0 || m.iter().any(|row| row.len() != s) {
        return Err(Error::InvalidDimension("Perron iteration needs a square matrix".into()));
    }
    if i0 >= s {
        return Err(Error::InvalidInput(format!("reference state {i0} out of range")));
    }
    if m.iter().flatten().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput("matrix must be finite and non-negative".into()));
    }
    let mut v = vec![1.0; s];
    for _ in 0..PERRON_MAX_SWEEPS {
        let w: Vec<f64> = m.iter().map(|row| dot(row, &v)).collect();
        let rho = w[i0];
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "component {i0} of the iterate vanished; matrix is not irreducible"
            )));
        }
        let next: Vec<f64> = w.iter().map(|x| x / rho).collect();
        let scale = next.iter().copied().fold(1.0, f64::max);
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change < PERRON_TOL * scale {
            if v.iter().any(|&x| x <= 0.0) {
                return Err(Error::InvalidInput(
                    "Perron vector has zero entries; matrix is not irreducible".into(),
                ));
            }
            let rho = dot(&m[i0], &v);
            return Ok(PerronPair { rho, v, i0 });
        }
    }
    Err(Error::SpectralFailure {
        sweeps: PERRON_MAX_SWEEPS,
    })
}

/// `ln rho(zeta)`, the limiting scaled log-MGF of the reward sum.
pub fn log_mgf(chain: &MarkovChain, zeta: f64) -> Result<f64> {
    Ok(perron_pair(&tilted_matrix(chain, zeta)?, 0)?.rho.ln())
}

fn kernel_from_pair(m: &[Vec<f64>], pair: &PerronPair) -> Result<Matrix> {
    m.iter()
        .zip(&pair.v)
        .enumerate()
        .map(|(i, (row, vi))| {
            let mut out: Vec<f64> = row
                .iter()
                .zip(&pair.v)
                .map(|(mij, vj)| mij * vj / (pair.rho * vi))
                .collect();
            let sum: f64 = out.iter().sum();
            if (sum - 1.0).abs() > KERNEL_ROW_TOL {
                return Err(Error::InvalidKernel { row: i, sum });
            }
            out.iter_mut().for_each(|x| *x /= sum);
            Ok(out)
        })
        .collect()
}

fn tilted_parts(chain: &MarkovChain, zeta: f64) -> Result<(PerronPair, Matrix)> {
    let m = tilted_matrix(chain, zeta)?;
    let pair = perron_pair(&m, 0)?;
    let kernel = kernel_from_pair(&m, &pair)?;
    Ok((pair, kernel))
}

/// The kernel `exp(zeta g(i)) p(i,j) V(j) / (rho V(i))`, rows renormalized
/// after checking they already sum to one.
pub fn tilted_kernel(chain: &MarkovChain, zeta: f64) -> Result<Matrix> {
    Ok(tilted_parts(chain, zeta)?.1)
}

/// Slope of `ln rho` at `zeta`: the stationary mean of `g` under the
/// `zeta`-tilted kernel.
pub fn lambda_prime(chain: &MarkovChain, zeta: f64) -> Result<f64> {
    let kernel = tilted_kernel(chain, zeta)?;
    Ok(stationary_distribution(&kernel)?.expectation(chain.rewards()))
}

/// Supremum of long-run average rewards over all cycles of the transition
/// graph (Karp's maximum mean cycle).
///
/// No threshold at or above this value can be conditioned on.
pub fn max_long_run_average(chain: &MarkovChain) -> f64 {
    let s = chain.states();
    let p = chain.transitions();
    let g = chain.rewards();
    // best[k][v]: heaviest walk of exactly k edges ending at v, edge i->j weighs g(i)
    let mut best = vec![vec![f64::NEG_INFINITY; s]; s + 1];
    best[0].iter_mut().for_each(|x| *x = 0.0);
    for k in 1..=s {
        for i in 0..s {
            let from = best[k - 1][i];
            if from == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..s {
                if p[i][j] > 0.0 && from + g[i] > best[k][j] {
                    best[k][j] = from + g[i];
                }
            }
        }
    }
    let mut sup = f64::NEG_INFINITY;
    for v in 0..s {
        if best[s][v] == f64::NEG_INFINITY {
            continue;
        }
        let worst = (0..s)
            .filter(|&k| best[k][v] > f64::NEG_INFINITY)
            .map(|k| (best[s][v] - best[k][v]) / (s - k) as f64)
            .fold(f64::INFINITY, f64::min);
        sup = sup.max(worst);
    }
    sup
}

/// Maximizer of `zeta alpha - ln rho(zeta)` over `zeta >= 0`.
///
/// Returns `0` when `alpha` does not exceed the stationary mean. Otherwise
/// solves `lambda_prime(zeta) = alpha` by bisection after doubling an upper
/// bracket from 1.
pub fn solve_zeta_star(chain: &MarkovChain, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() {
        return Err(Error::param("alpha", format!("must be finite, got {alpha}")));
    }
    if alpha <= lambda_prime(chain, 0.0)? {
        return Ok(0.0);
    }
    let sup = max_long_run_average(chain);
    if alpha >= sup {
        return Err(Error::UnattainableThreshold { alpha, sup });
    }
    let span = chain.rewards().iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let (mut lo, mut hi) = (0.0, 1.0);
    while lambda_prime(chain, hi)? <= alpha {
        lo = hi;
        hi *= 2.0;
        if hi * span > MAX_EXPONENT {
            return Err(Error::UnattainableThreshold { alpha, sup });
        }
    }
    while hi - lo >= ZETA_BRACKET_WIDTH {
        let mid = 0.5 * (lo + hi);
        if lambda_prime(chain, mid)? < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Everything the exact route knows about one chain and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub zeta_star: f64,
    pub rho_star: f64,
    #[serde(rename = "V_star")]
    pub v_star: Vec<f64>,
    pub p_star: Matrix,
    pub pi_star: Vec<f64>,
    pub acvar: f64,
    pub alpha: f64,
    pub i0: usize,
}

impl OracleSolution {
    /// `V*` rescaled so that `V(i0) = rho*` for the chosen reference state,
    /// the normalization a relative value iteration settles on.
    pub fn v_rescaled(&self, i0: usize) -> Vec<f64> {
        let f = self.rho_star / self.v_star[i0];
        self.v_star.iter().map(|x| x * f).collect()
    }
}

/// Upper-tail asymptotic CVaR: the conditioned stationary mean of `g` given
/// the long-run average is at least `alpha`.
pub fn acvar_oracle(chain: &MarkovChain, alpha: f64) -> Result<OracleSolution> {
    let zeta_star = solve_zeta_star(chain, alpha)?;
    let (pair, p_star) = tilted_parts(chain, zeta_star)?;
    let pi_star = stationary_distribution(&p_star)?.pi;
    let acvar = pi_star.iter().zip(chain.rewards()).map(|(p, g)| p * g).sum();
    Ok(OracleSolution {
        zeta_star,
        rho_star: pair.rho,
        v_star: pair.v,
        p_star,
        pi_star,
        acvar,
        alpha,
        i0: pair.i0,
    })
}

/// Either tail. The lower tail conditions on the average being at most
/// `alpha`; it is solved on the negated rewards and mapped back, so
/// `zeta_star <= 0` and `rho_star` refer to the original `g`.
pub fn acvar_oracle_tail(chain: &MarkovChain, alpha: f64, tail: Tail) -> Result<OracleSolution> {
    match tail {
        Tail::Upper => acvar_oracle(chain, alpha),
        Tail::Lower => {
            let negated = chain.with_rewards(chain.rewards().iter().map(|g| -g).collect())?;
            let mut sol = acvar_oracle(&negated, -alpha).map_err(|e| match e {
                Error::UnattainableThreshold { alpha, sup } => Error::UnattainableThreshold {
                    alpha: -alpha,
                    sup: -sup,
                },
                other => other,
            })?;
            sol.zeta_star = -sol.zeta_star;
            sol.acvar = -sol.acvar;
            sol.alpha = alpha;
            Ok(sol)
        }
    }
}

/// Stationary expectation of `h` under the conditioned kernel.
pub fn conditioned_expectation(solution: &OracleSolution, h: &[f64]) -> Result<f64> {
    if h.len() != solution.pi_star.len() {
        return Err(Error::InvalidInput(format!(
            "h has length {}, chain has {} states",
            h.len(),
            solution.pi_star.len()
        )));
    }
    Ok(solution.pi_star.iter().zip(h).map(|(p, x)| p * x).sum())
}
