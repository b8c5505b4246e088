use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PumaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PumaError {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    Dimension { context: &'static str, left: String, right: String },

    #[error("{what} out of range: {value} (limit {limit})")]
    OutOfRange { what: &'static str, value: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("user {0} is missing from {1}")]
    MissingUser(usize, &'static str),

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("frozen contract violated: {0}")]
    FrozenViolation(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PumaError>,
    },
}

impl PumaError {
    pub(crate) fn dims(context: &'static str, left: impl ToString, right: impl ToString) -> Self {
        PumaError::Dimension {
            context,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PumaError::Io { path: path.into(), source }
    }

    /// Whether the error stems from bad configuration rather than a failed computation.
    pub fn is_config(&self) -> bool {
        match self {
            PumaError::Config(_) | PumaError::Json(_) => true,
            PumaError::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

/// Tags an error with the pipeline stage that produced it.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            PumaError::Stage { .. } => e,
            other => PumaError::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
