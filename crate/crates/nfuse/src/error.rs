use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible layer {layer_index}: {reason}")]
    InfeasibleLayer { layer_index: usize, reason: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("unpaired encodings for session {0}")]
    UnpairedSession(String),

    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("output path {0} already exists (pass --force to overwrite)")]
    AlreadyExists(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape_mismatch(
        context: impl Into<String>,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    /// Short machine-parsable category, used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InfeasibleLayer { .. } => "infeasible-layer",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::UnpairedSession(_) => "unpaired-session",
            Error::MalformedRecord(_) => "malformed-record",
            Error::Format(_) => "bad-format",
            Error::AlreadyExists(_) => "already-exists",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
