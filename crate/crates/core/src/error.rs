use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of an operation (non-finite angle, empty shape, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario field failed validation. `path` is the dotted field path, e.g. `sim.dt`.
    #[error("invalid scenario field `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A malformed line in a trace file, 1-based line number.
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error("malformed protocol message `{0}`")]
    Message(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
