use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row} is not a probability vector (sum = {sum})")]
    InvalidKernel { row: usize, sum: f64 },

    #[error("{what} did not converge within {sweeps} sweeps")]
    ConvergenceFailure { what: &'static str, sweeps: usize },

    #[error("Perron iteration did not converge within {sweeps} sweeps")]
    SpectralFailure { sweeps: usize },

    /// `exp(zeta * g)` left the representable range; rescale the rewards.
    #[error("tilt overflow: exp({zeta} * {reward}) is not representable, rescale the reward profile")]
    TiltOverflow { zeta: f64, reward: f64 },

    #[error("threshold {alpha} is unattainable (supremum of long-run averages is {sup})")]
    UnattainableThreshold { alpha: f64, sup: f64 },

    #[error("no path of length {n} out of {num_paths} reached the threshold")]
    NoAcceptance { n: usize, num_paths: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("tilted transition probability {prob:e} for {from} -> {to} is below the likelihood-ratio floor")]
    LikelihoodRatioOverflow { from: usize, to: usize, prob: f64 },

    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at(self, iter: usize) -> Self {
        Error::AtIteration {
            iter,
            source: Box::new(self),
        }
    }
}
