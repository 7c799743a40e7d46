use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("group {group}: sample size {size} outside [1, {available}]")]
    SizeOutOfRange {
        group: usize,
        size: usize,
        available: usize,
    },

    #[error("group {group}: insufficient data ({len} rows) for {function}")]
    InsufficientData {
        group: usize,
        len: usize,
        function: &'static str,
    },

    #[error("logistic regression did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("{0} is already a consistent estimator")]
    AlreadyConsistent(String),

    #[error("{0} cannot be transformed into a consistent estimator")]
    NotTransformable(String),

    #[error("result layout mismatch: {left} vs {right} entries")]
    LayoutMismatch { left: usize, right: usize },

    #[error("underdetermined profile: {records} records for {params} parameters")]
    Underdetermined { records: usize, params: usize },

    #[error("degenerate profile: design matrix is rank deficient")]
    DegenerateProfile,

    #[error("undefined r2: targets have zero variance")]
    UndefinedR2,

    #[error("model slope for group {group} is not positive ({value})")]
    NonPositiveSlope { group: usize, value: f64 },

    #[error("indistinguishable groups: two group results are equal")]
    IndistinguishableGroups,

    #[error("ordering bound requires a pilot result")]
    MissingPilot,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bootstrap failed: every resample evaluation failed ({0})")]
    BootstrapFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
