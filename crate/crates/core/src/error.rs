use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({left_rows}x{left_cols} vs {right_rows}x{right_cols})")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("{op}: data length {len} does not match shape {rows}x{cols}")]
    BadShape {
        op: &'static str,
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("{op}: result contains a non-finite value")]
    NonFinite { op: &'static str },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: |s[{row},{col}] - s[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive definite: pivot {index} is {pivot:e}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is singular to working precision (column {column})")]
    Singular { column: usize },

    #[error("negative squared distance {value:e}")]
    NegativeDistance { value: f64 },

    #[error("invalid dimension {0}: must be at least 1")]
    ZeroDimension(usize),

    #[error(
        "constellation points {first} and {second} nearly coincide (squared distance {dist2:e})"
    )]
    CoincidentPoints {
        first: usize,
        second: usize,
        dist2: f64,
    },

    #[error("degenerate kernel coefficients: {0}")]
    DegenerateKernel(&'static str),

    #[error("fast path requires an octahedral constellation")]
    NotOctahedral,

    #[error("batch state is stale or does not belong to this package")]
    StaleState,

    #[error("batch state is missing {0}")]
    MissingState(&'static str),

    #[error("invalid cascade widths: {0}")]
    InvalidWidths(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Data(#[from] crate::data::DataError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("epoch {epoch}, batch {batch}: {source}{}", spd_advice(source))]
    TrainingStep {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },
}

fn spd_advice(e: &Error) -> &'static str {
    if e.is_spd_failure() {
        " (the regularized system is not positive definite; raise alpha)"
    } else {
        ""
    }
}

impl Error {
    pub(crate) fn mismatch(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    /// True for failures of the regularized training solve, which callers
    /// usually fix by raising the ridge coefficient.
    pub fn is_spd_failure(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } => true,
            Error::TrainingStep { source, .. } => source.is_spd_failure(),
            _ => false,
        }
    }
}
