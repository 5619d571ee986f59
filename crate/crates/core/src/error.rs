use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("backward called without a matching forward cache: {0}")]
    MissingForwardCache(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradients in parameter groups: {}", .0.join(", "))]
    NonFiniteGradients(Vec<String>),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("knob `{knob}` out of range [-1, 1]: {value}")]
    KnobOutOfRange { knob: &'static str, value: f64 },

    #[error("uncovered vertex {vertex}: blend weights sum to zero")]
    UncoveredVertex { vertex: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing artifact {path}: {reason}")]
    MissingArtifact { path: PathBuf, reason: String },

    #[error("stale artifact {path}: {reason}")]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
