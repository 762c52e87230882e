use thiserror::Error;

use crate::ad::AdError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ad(#[from] AdError),

    #[error("parameter {name} = {value} is outside its domain")]
    ParameterDomain { name: String, value: f64 },

    #[error("all measurement weights vanished at observation {step} (particle depletion)")]
    Degenerate { step: usize },

    #[error("simulation blew up: {component} is {value} at t = {time}")]
    Blowup {
        component: &'static str,
        value: f64,
        time: f64,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimization aborted at iteration {iteration}: {reason}")]
    OptimizationAbort { iteration: usize, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Whether the failure is the caller's fault (bad input) rather than a
    /// numerical breakdown.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Usage(_) | Error::Parse(_) | Error::Io(_) | Error::ParameterDomain { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
