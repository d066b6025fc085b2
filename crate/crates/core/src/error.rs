//! Error type shared by every module in the crate.

/// Everything that can go wrong when validating inputs or running a fit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("need at least {min} usable observations, got {n}")]
    TooFewObservations { n: usize, min: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("sample values are all equal; slope and correlation are undefined")]
    ZeroVariance,

    #[error("probability {p} is outside the open interval (0, 1)")]
    InvalidProbability { p: f64 },

    #[error("degrees of freedom must be positive and finite, got {nu}")]
    InvalidDegreesOfFreedom { nu: f64 },

    #[error("plotting-position offset must lie in [0, 1), got {offset}")]
    InvalidOffset { offset: f64 },

    #[error("value {value} at index {index} must be strictly positive for a power transform")]
    NonPositive { index: usize, value: f64 },

    #[error("cannot treat {k} of {n} observations as censored: {reason}")]
    InvalidCensoring { k: usize, n: usize, reason: String },

    #[error("cannot winsorize {w} per tail with n = {n}: {reason}")]
    InvalidWinsorization { w: usize, n: usize, reason: String },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
