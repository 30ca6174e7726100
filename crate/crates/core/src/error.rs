use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PersError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PersError {
    #[error("invalid MBTI code {0:?}")]
    InvalidCode(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("image id {image_id:?} referenced by user {user_id:?} has no stored vector")]
    DanglingImageRef { user_id: String, image_id: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value in input: {0}")]
    NonFiniteInput(String),

    #[error("vocabulary is empty after pruning")]
    EmptyVocabulary,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("fold error: {0}")]
    Fold(String),

    #[error("row alignment error: {0}")]
    Alignment(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PersError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PersError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable, machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            PersError::InvalidCode(_) => "InvalidCode",
            PersError::Schema(_) => "SchemaError",
            PersError::DanglingImageRef { .. } => "DanglingImageRef",
            PersError::Dimension(_) => "DimensionError",
            PersError::NonFiniteInput(_) => "NonFiniteInput",
            PersError::EmptyVocabulary => "EmptyVocabulary",
            PersError::InsufficientData(_) => "InsufficientData",
            PersError::DegenerateInput(_) => "DegenerateInput",
            PersError::Fold(_) => "FoldError",
            PersError::Alignment(_) => "AlignmentError",
            PersError::LengthMismatch { .. } => "LengthMismatch",
            PersError::EmptyInput => "EmptyInput",
            PersError::Config(_) => "ConfigError",
            PersError::MissingArtifact(_) => "MissingArtifact",
            PersError::FingerprintMismatch { .. } => "FingerprintMismatch",
            PersError::Format(_) => "FormatError",
            PersError::Io { .. } => "IoError",
        }
    }
}

impl From<serde_json::Error> for PersError {
    fn from(e: serde_json::Error) -> Self {
        PersError::Format(e.to_string())
    }
}
