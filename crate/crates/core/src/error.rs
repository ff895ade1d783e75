use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field has {found} values but the grid has {expected} nodes")]
    FieldLength { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("matrix is not symmetric: |R[{row}][{col}] - R[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("invalid time specification: {0}")]
    InvalidTime(String),

    #[error("cannot step a path that has already blown up (t = {0})")]
    SteppingBlownUp(f64),

    #[error("noise envelope does not decay in time; the noise budget is infinite")]
    NonDecayingNoise,

    #[error("ensemble needs at least one path")]
    EmptyEnsemble,

    #[error("path records do not share a time axis: {0}")]
    MismatchedRecords(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}
