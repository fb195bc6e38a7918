use thiserror::Error;

/// Errors raised by data handling, design routines and the model-based oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("window [{start}, {end}] is outside the available samples [{first}, {last}]")]
    WindowOutOfRange {
        start: i64,
        end: i64,
        first: i64,
        last: i64,
    },

    #[error("sequence too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("input is not persistently exciting of order {order} after {attempts} draws")]
    ExcitationNotAchieved { order: usize, attempts: usize },

    #[error("rank condition fails: rank {rank}, required {required}")]
    RankCondition { rank: usize, required: usize },

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    #[error("closed loop is not asymptotically stable (spectral radius {0})")]
    Unstable(f64),

    #[error("iteration did not converge after {0} steps")]
    NotConverged(usize),

    #[error("matrix is singular to working precision: {0}")]
    Singular(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
