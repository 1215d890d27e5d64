use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or invariant violation detected before any work runs.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("variant 'full' requires text embeddings, but none were provided")]
    MissingText,

    #[error("shape mismatch: expected {expected}, found {found}{context}")]
    Shape {
        expected: String,
        found: String,
        context: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub fn shape(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            found: found.into(),
            context: String::new(),
        }
    }

    pub fn shape_in(
        expected: impl Into<String>,
        found: impl Into<String>,
        context: impl Into<String>,
    ) -> Self {
        Error::Shape {
            expected: expected.into(),
            found: found.into(),
            context: format!(" in {}", context.into()),
        }
    }

    /// True for errors a CLI should report as misconfiguration (exit code 2)
    /// rather than runtime failure (exit code 1).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingText | Error::Shape { .. }
        )
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
