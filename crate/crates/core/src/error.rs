use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure classes surfaced by the pipeline.
///
/// Every variant maps to a stable machine-readable code (see [`Error::code`])
/// and a process exit status (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("profile has no non-empty rows")]
    EmptyBody,

    #[error("row count mismatch: back view has {back} rows, side view has {side}")]
    RowMismatch { back: usize, side: usize },

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("normal equations are singular (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("need at least {required} samples, got {samples}")]
    InsufficientData { samples: usize, required: usize },

    #[error("phantom does not fit its canvas: {0}")]
    SpecOutOfBounds(String),

    #[error("malformed manifest: {0}")]
    ManifestParse(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn bad_image(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::BadImage {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Stable identifier for the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::BadImage { .. } => "BadImage",
            Error::EmptyMask => "EmptyMask",
            Error::EmptyBody => "EmptyBody",
            Error::RowMismatch { .. } => "RowMismatch",
            Error::FeatureMismatch(_) => "FeatureMismatch",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::SpecOutOfBounds(_) => "SpecOutOfBounds",
            Error::ManifestParse(_) => "ManifestParse",
            Error::InvalidParams(_) => "InvalidParams",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_) => 2,
            Error::BadImage { .. } => 3,
            Error::EmptyMask => 4,
            Error::RowMismatch { .. } => 5,
            Error::FeatureMismatch(_) => 6,
            Error::SingularSystem { .. } => 7,
            Error::InsufficientData { .. } => 8,
            Error::EmptyBody => 9,
            Error::SpecOutOfBounds(_) => 10,
            Error::ManifestParse(_) => 11,
            Error::Io(_) => 12,
            Error::Json(_) | Error::Csv(_) => 13,
        }
    }
}
