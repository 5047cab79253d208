use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented invariant. The message names the
    /// violated invariant.
    #[error("validation: {0}")]
    Validation(String),

    /// A query batch would push the ledger past its budget. The ledger is
    /// left unchanged when this is returned.
    #[error("budget exhausted: requested {requested} with {remaining} remaining")]
    BudgetExhausted { requested: u64, remaining: u64 },

    /// Tensor/shape mismatch between producer and consumer.
    #[error("shape: {0}")]
    Shape(String),

    /// Malformed configuration text or an invalid field value.
    #[error("config: {0}")]
    Config(String),

    /// A serialized artifact could not be decoded (bad magic, version, or
    /// truncated payload).
    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
