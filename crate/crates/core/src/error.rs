use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("matrix dimensions must be positive, got {n_rows}x{n_cols}")]
    EmptyDimensions { n_rows: usize, n_cols: usize },
    #[error("reference matrix has zero Frobenius norm")]
    ZeroNorm,
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("rank {rank} out of range for a {n_rows}x{n_cols} matrix")]
    RankOutOfRange {
        rank: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("position ({row}, {col}) outside a {n_rows}x{n_cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("duplicate position ({row}, {col})")]
    DuplicatePosition { row: usize, col: usize },
    #[error("requested {requested} positions but only {available} are available")]
    TooManyPositions { requested: usize, available: usize },
    #[error("system matrix is rank deficient (sigma_min / sigma_max = {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("rank-one update breaks down: denominator {0:e}")]
    UpdateBreakdown(f64),
    #[error("neither side of the mask graph has {rank} nodes to seed from")]
    NoSeedSide { rank: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
