use thiserror::Error;

/// Failure categories shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    #[error("unsupported configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Prefix the message with extra context while keeping the category.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::Argument(m) => Error::Argument(format!("{ctx}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
            Error::Range(m) => Error::Range(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Capacity(m) => Error::Capacity(format!("{ctx}: {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        }
    }
}
