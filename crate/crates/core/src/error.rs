use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("t = {t} outside trajectory domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },

    /// A scenario key is missing, malformed or violates an invariant.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    /// Malformed CSV content; `row` is 1-based and counts the header.
    #[error("{source_name}: row {row}: {message}")]
    Parse {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("non-finite EV state at step {step}")]
    NonFinite { step: usize },

    #[error("trajectory optimization made no progress: {0}")]
    NoProgress(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::OutOfDomain { .. } => "out-of-domain",
            Error::Config { .. } => "config",
            Error::Parse { .. } => "parse",
            Error::NonFinite { .. } => "non-finite",
            Error::NoProgress(_) => "no-progress",
            Error::Io(_) => "io",
        }
    }
}
