use thiserror::Error;

use crate::trainer::Checkpoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("non-finite value in layer {layer}: {what}")]
    Numeric { layer: usize, what: String },

    #[error("training diverged at step {step}; last good checkpoint at step {}", last_good.step)]
    Diverged { step: usize, last_good: Box<Checkpoint> },

    #[error("remote annotator: {0}")]
    Remote(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input or configuration problems, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::UnknownLabel(_)
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Dimension(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
