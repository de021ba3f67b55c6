//! Asymptotic conditional value at risk of finite Markov chains.
//!
//! Conditioning the long-run average reward of a chain on exceeding a
//! threshold turns it, in the limit, into another Markov chain with an
//! exponentially tilted kernel. The crate computes that kernel and the
//! conditioned stationary mean (the asymptotic CVaR) three ways:
//!
//! * [`oracle`]: exact, through the Perron pair of the tilted matrix;
//! * [`sa`]: from simulation alone, by two-timescale stochastic approximation;
//! * [`oracle::mc`]: by rejection sampling finite paths.
//!
//! The threshold is the smoothed quantile of the stationary reward
//! distribution ([`density`]).
//!
//! ```
//! use acvar::{oracle, MarkovChain};
//!
//! let coin = MarkovChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0, 1.0])?;
//! let sol = oracle::acvar_oracle(&coin, 0.75)?;
//! assert!((sol.zeta_star - 3f64.ln()).abs() < 1e-8);
//! assert!((sol.acvar - 0.75).abs() < 1e-8);
//! # Ok::<(), acvar::Error>(())
//! ```

pub mod density;
pub mod error;
pub mod markov;
pub mod oracle;
pub mod rng;
pub mod sa;

use serde::{Deserialize, Serialize};

pub use density::{fit_kde, KdeModel};
pub use error::{Error, Result};
pub use markov::{MarkovChain, Matrix, StationaryDistribution};
pub use oracle::{acvar_oracle, OracleSolution, PerronPair};
pub use sa::{RunTrace, SaConfig, SaState, StepSchedule};

/// Which side of the reward distribution is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    /// Average at least the threshold; tilt `zeta >= 0`.
    #[default]
    Upper,
    /// Average at most the threshold; tilt `zeta <= 0`.
    Lower,
}

/// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/chains.md")]
    pub mod chains {}
    #[doc = include_str!("../../../book/src/threshold.md")]
    pub mod threshold {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    pub mod oracle {}
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    pub mod monte_carlo {}
    #[doc = include_str!("../../../book/src/stochastic_approximation.md")]
    pub mod stochastic_approximation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
