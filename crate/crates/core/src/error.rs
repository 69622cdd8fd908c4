use thiserror::Error;

/// Errors raised anywhere in the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fixed-point overflow at element {index}: {value} does not fit in a {width}-bit ring with {q} fraction bits")]
    Overflow {
        index: usize,
        value: f64,
        width: u32,
        q: u32,
    },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("round {round} timed out waiting for peers")]
    RoundTimeout { round: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn violation(msg: impl Into<String>) -> Self {
        Error::ProtocolViolation(msg.into())
    }
}
