use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Each variant maps onto one CLI exit code class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("empty media: {0}")]
    EmptyMedia(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("face absent for every frame of sample {0}")]
    FaceAbsent(String),

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("modality missing: {0}")]
    ModalityMissing(String),

    #[error("comparison graph is disconnected: {} components ({})", .0.len(), format_components(.0))]
    Disconnected(Vec<Vec<String>>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Non-finite loss during training; carries the last finite checkpoint.
    #[error("training diverged: {message}")]
    Diverged {
        message: String,
        last_good: Option<Box<crate::nn::checkpoint::Container>>,
    },
}

fn format_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| format!("[{}]", c.join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Error {
    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn for_sample(self, id: &str) -> Self {
        Error::Sample {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for validation-class failures, 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Shape { .. }
            | Error::Config(_)
            | Error::Format(_)
            | Error::Dataset(_)
            | Error::ModalityMissing(_)
            | Error::Disconnected(_) => 2,
            Error::Numeric(_) | Error::Diverged { .. } => 3,
            Error::Sample { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
