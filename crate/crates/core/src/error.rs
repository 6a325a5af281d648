use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("sample index {index} out of range for dataset of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no workers supplied")]
    NoWorkers,
    #[error("batch size {batch} outside 1..={available}")]
    BatchSize { batch: usize, available: usize },
    #[error("retained coordinate count {k} outside 1..={dim}")]
    CoordinateCount { k: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("capped simplex infeasible: {active} active columns with cap {cap} (need at least {needed})")]
    Infeasible { active: usize, cap: f64, needed: usize },
    #[error("filter collapsed after {rounds} rounds: active set became empty")]
    FilterCollapsed { rounds: usize },
    #[error("filter inconsistency: threshold exceeded with maximal reconstruction error {tau_max}")]
    NumericalFloor { tau_max: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
