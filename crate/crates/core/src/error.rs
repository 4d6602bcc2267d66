use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid intensity row for regime {source_regime}: {reason}")]
    InvalidRow {
        source_regime: usize,
        reason: String,
    },

    #[error(
        "intensity exponent overflow for switch {from} -> {to}: argument {argument:.3} exceeds cap {cap}"
    )]
    IntensityOverflow {
        from: usize,
        to: usize,
        argument: f64,
        cap: f64,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "coupling sub-iteration did not converge at time index {time_index}: last change {residual:.3e} after {iterations} sweeps"
    )]
    SubIteration {
        time_index: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("obstacle projection did not stabilise at time index {time_index}: last change {residual:.3e}")]
    Projection { time_index: usize, residual: f64 },

    #[error("non-finite value at time index {time_index}, regime {regime}, node {node}")]
    NonFinite {
        time_index: usize,
        regime: usize,
        node: usize,
    },

    #[error("a-priori bound violated at time index {time_index}, regime {regime}, node {node}: |V| = {value:.6} > {bound:.6}")]
    BoundViolation {
        time_index: usize,
        regime: usize,
        node: usize,
        value: f64,
        bound: f64,
    },

    #[error("parameter vector has length {actual}, architecture expects {expected}")]
    ParamMismatch { expected: usize, actual: usize },

    #[error("training diverged at episode {episode}: {reason}")]
    Divergence { episode: usize, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint architecture mismatch: file has {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("checkpoint model hash mismatch: file has {found}, expected {expected}")]
    ModelHashMismatch { expected: String, found: String },

    #[error("checkpoint content digest mismatch (file was modified)")]
    DigestMismatch,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
