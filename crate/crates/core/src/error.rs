use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate object box: {0}")]
    DegenerateBox(String),
    #[error("degenerate pose: all points coincide")]
    DegeneratePose,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty evaluation set")]
    EmptySet,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("loss node is {rows}x{cols}, expected a scalar")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("sampled frame {sequence_id}:{frame_idx} has no 3D annotation")]
    MissingLabels { sequence_id: String, frame_idx: u64 },
    #[error("no frozen dictionary module supplied")]
    MissingDictionary,
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch { expected: expected.into(), got: got.into() }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), message: message.into() }
    }

    /// True for errors caused by bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::Parse { .. }
                | Error::ShapeMismatch { .. }
                | Error::MissingLabels { .. }
                | Error::TooFewPoints { .. }
                | Error::EmptySet
                | Error::EmptyBatch
        )
    }
}
