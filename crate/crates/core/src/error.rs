use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Toolkit-wide error type. Variants are grouped so front-ends can map
/// them onto exit-code categories (usage / io / numerical).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("covariance matrix is singular even after ridge regularization; enable PCA or raise the ridge coefficient ({0})")]
    SingularCovariance(String),

    #[error("zero-variance training data: PCA has no directions to retain")]
    ZeroVariance,

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("missing files:\n{}", list(.0))]
    MissingFiles(Vec<PathBuf>),

    #[error("score table is missing case ids: {}", .0.join(", "))]
    MissingScores(Vec<String>),

    #[error("fit failed for challenge {challenge}: {source}")]
    Challenge {
        challenge: String,
        #[source]
        source: Box<Error>,
    },
}

fn list(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| format!("  {}", p.display()))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors stemming from file access or file contents.
    pub fn is_io_class(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::Manifest(_)
                | Error::MissingFiles(_)
                | Error::MissingScores(_)
        )
    }
}
