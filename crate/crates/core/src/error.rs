//! Error type shared by all simulation modules.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A model assumption required by the requested computation does not hold
    /// (e.g. the walk is not transient to the right).
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    /// The adaptive series truncation for the potential exceeded the hard
    /// depth cap; the seed region is pathological for the requested tolerance.
    #[error("series truncation depth exceeded cap {cap} near site {site}")]
    DepthExceeded { site: i64, cap: u64 },

    /// Two configurations that must share a window do not.
    #[error("window mismatch: [{0}, {1}] vs [{2}, {3}]")]
    WindowMismatch(i64, i64, i64, i64),

    /// The configuration window cannot cone-cover the requested observation.
    #[error("window too small: {0}")]
    WindowTooSmall(String),

    /// Two walks at odd separation can never share a site at equal times.
    #[error("parity error: separation {0} is odd, walks can never meet")]
    ParityError(i64),

    /// An estimator was handed fewer samples than its floor.
    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    /// Invalid model or experiment parameters.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
