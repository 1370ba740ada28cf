use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the clustering library.
#[derive(Debug, Error)]
pub enum DckmError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("non-binary entry {value} at ({row}, {col})")]
    NonBinary { row: usize, col: usize, value: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("label {label} at position {position} out of range for {k} clusters")]
    LabelOutOfRange { label: usize, position: usize, k: usize },

    #[error("feature {feature}: {group} group has no weight mass")]
    DegenerateGroup { feature: usize, group: &'static str },

    #[error("cluster {cluster} stayed empty after {attempts} re-seed attempts")]
    EmptyCluster { cluster: usize, attempts: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("data validation failed: {0}")]
    InvalidData(String),

    #[error("all {0} features were dropped")]
    AllFeaturesDropped(usize),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = DckmError> = std::result::Result<T, E>;
