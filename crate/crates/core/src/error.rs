use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate Q* gap: all actions tie at state {state}")]
    DegenerateGap { state: usize },

    #[error("{0} buffer is empty")]
    EmptyBuffer(&'static str),

    #[error("non-finite value in layer {layer}: {message}")]
    Numerical { layer: usize, message: String },

    #[error("non-finite PPO loss at epoch {epoch}, minibatch {minibatch}")]
    NonFiniteLoss { epoch: usize, minibatch: usize },

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
