use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("degenerate neighborhood geometry at node {node}: {reason}")]
    DegenerateGeometry { node: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::DegenerateGeometry { .. } => "degenerate_geometry",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
            Error::Decode(_) => "decode",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Error {
    Error::ShapeMismatch {
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}
