use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is singular: exactly zero pivot in column {column}")]
    Singular { column: usize },

    /// A diagonal block of the Padé denominator has a pivot below the
    /// relative threshold. Usually a sign of overscaling or an input far
    /// outside the Padé regime.
    #[error("ill-conditioned diagonal block {block}: smallest pivot {pivot:e} below {threshold:e}")]
    IllConditioned { block: usize, pivot: f64, threshold: f64 },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("unsupported Padé degree {0} (expected one of 3, 5, 7, 9, 13)")]
    UnsupportedDegree(usize),

    #[error("invalid block index ({i}, {j}): {reason}")]
    BlockIndex { i: usize, j: usize, reason: &'static str },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("generator maps {monomial} (degree {from}) to a term of degree {to}")]
    DegreeRaised { monomial: String, from: usize, to: usize },

    #[error("quadrature for coefficient {n} did not converge with {nodes} nodes (last change {residual:e})")]
    Quadrature { n: usize, nodes: usize, residual: f64 },

    #[error("eigenbasis condition target {target} not reached after {attempts} rescales (last estimate {last:e})")]
    ConditionTarget { target: f64, attempts: usize, last: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
