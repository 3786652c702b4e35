use thiserror::Error;

/// Errors raised while building, validating or reading problems.
///
/// Solver outcomes (infeasible relaxations, iteration limits, ...) are not
/// errors; they are reported through status enums on the result types.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("cost Hessian Q is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("bounds inverted in `{field}` at index {index}")]
    BoundsInverted { field: String, index: usize },

    #[error("non-finite value in `{field}` at index {index}")]
    NonFinite { field: String, index: usize },

    #[error("constraint row {row} of `{field}` is identically zero")]
    ZeroRow { field: String, row: usize },

    #[error("invalid warm start: {0}")]
    InvalidWarmStart(String),

    #[error("invalid SOS1 structure: {0}")]
    InvalidSos1(String),

    #[error("threshold ordering violated: lower threshold {lower} must be below upper threshold {upper}")]
    ThresholdOrder { lower: f64, upper: f64 },

    #[error("all candidate branching values are integral")]
    AllIntegral,

    #[error("instance too large for the reference solver: {0}")]
    TooLarge(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
