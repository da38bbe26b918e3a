use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a mathematical function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input array has the wrong length or shape.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// A layer was evaluated before its data-dependent initialization.
    #[error("layer {layer} ({kind}) is not initialized")]
    Uninitialized { layer: usize, kind: &'static str },

    /// A parameter or intermediate value became NaN or infinite.
    #[error("non-finite value in layer {layer}: {what}")]
    NonFinite { layer: usize, what: String },

    /// The loss for a batch row is not finite.
    #[error("non-finite loss at batch row {row}")]
    NonFiniteLoss { row: usize },

    /// Invertible linear layer with a zero diagonal entry in U.
    #[error("singular invertible-linear layer {layer}: U[{index}][{index}] = 0")]
    Singular { layer: usize, index: usize },

    /// A tape was recorded against a different parameter version.
    #[error("stale tape: recorded at parameter version {tape}, model is at {model}")]
    StaleTape { tape: u64, model: u64 },

    /// A file could not be parsed.
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Invalid configuration value.
    #[error("invalid config `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
