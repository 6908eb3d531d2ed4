use thiserror::Error;

use crate::data::{DataError, LoggingScenario};
use crate::policy::{PolicyError, PolicyParams};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Policy(#[from] PolicyError),

    #[error("propensities required ({0} logging scenario has none)")]
    PropensitiesRequired(LoggingScenario),

    #[error("full propensities required, dataset is logged as {0}")]
    FullPropensitiesRequired(LoggingScenario),

    #[error("{what} requires nonnegative rewards (record {record} has {reward})")]
    NegativeReward {
        what: &'static str,
        record: usize,
        reward: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: objective is not finite")]
    Diverged {
        epoch: usize,
        last_finite: Box<PolicyParams>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
