use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs violate a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    /// A dataset cannot supply the requested episode.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A loss or parameter became non-finite.
    #[error("numeric error at step {step}: {context}")]
    Numeric { step: u64, context: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numeric(step: u64, context: impl Into<String>) -> Self {
        Error::Numeric {
            step,
            context: context.into(),
        }
    }

    /// Process exit code for this error class: 2 for configuration and
    /// validation problems, 3 for numeric/training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
