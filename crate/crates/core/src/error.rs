use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid network shape: {0}")]
    InvalidShape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("loss {loss} cannot be used with {targets} targets")]
    TargetKind {
        loss: &'static str,
        targets: &'static str,
    },

    #[error("measures have unequal atom counts ({left} vs {right})")]
    UnequalAtomCounts { left: usize, right: usize },

    #[error("barycenter does not match the ensemble: {0}")]
    StaleBarycenter(String),

    #[error("task {task} has no particles assigned")]
    EmptyTask { task: usize },

    #[error("{path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter `{param}` differs across compared methods ({left} vs {right})")]
    SharedParameterMismatch {
        param: &'static str,
        left: f64,
        right: f64,
    },

    #[error("records are not aligned: {0}")]
    MisalignedRecords(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
