use std::path::PathBuf;

/// Errors raised by the simulator and its persistence layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at `{path}`: {message}")]
    ConfigParse { path: String, message: String },

    #[error("config rejected: {key} = {value} violates {bound}")]
    ConfigBound {
        key: &'static str,
        value: String,
        bound: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("context id {context} out of range (num_contexts = {num_contexts})")]
    ContextOutOfRange { context: usize, num_contexts: usize },

    #[error("non-finite gradient at context {context}, action {action}")]
    NonFiniteGradient { context: usize, action: usize },

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
