use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by the process exit code they map to: configuration
/// problems (2), bad or unusable data (3) and numeric failures (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid representation spec: {0}")]
    InvalidSpec(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("stage `{stage}` failed{}: {source}", instance.as_ref().map(|i| format!(" at `{i}`")).unwrap_or_default())]
    Stage {
        stage: String,
        instance: Option<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: &str, instance: Option<String>, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            instance,
            source: Box::new(source),
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => 2,
            Error::Parse { .. } | Error::Data(_) | Error::Shape(_) | Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Undefined(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
