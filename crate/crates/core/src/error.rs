use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("global optimum is not unique: arms {first} and {second} tie at {value}")]
    NonUniqueOptimum {
        first: usize,
        second: usize,
        value: f64,
    },
    #[error("value {value} of `{field}` is outside [0, 1]")]
    DomainError { field: &'static str, value: f64 },
    #[error("reward {0} is outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("no instance accepted after {attempts} attempts")]
    GenerationExhausted { attempts: u64 },
    #[error("configuration error in `{field}`: {message}")]
    Config {
        field: &'static str,
        message: String,
    },
    #[error("active arm set became empty")]
    EmptyActiveSet,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("alpha = {0} is below 3/2")]
    AlphaOutOfRange(f64),
    #[error("degenerate sweep: every mean cost equals {0}")]
    DegenerateSweep(f64),
    #[error("designated agent {agent} received no incentive offer in run {run}")]
    NoOfferOccurred { agent: usize, run: usize },
    #[error("malformed instance file: {0}")]
    Parse(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
