use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("row {row} has {found} fields, expected {expected}")]
    NonRectangular {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("target column `{0}` not found")]
    MissingTargetColumn(String),
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { row: usize, column: String },
    #[error("non-finite or unparsable numeric value `{value}` in column `{column}` at row {row}")]
    BadNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("dataset has no target")]
    NoTarget,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown row id {0}")]
    UnknownRowId(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate partition: {0} model(s), at least 2 required")]
    DegeneratePartition(usize),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("all qualities are zero")]
    AllQualitiesZero,
    #[error("insufficient rank: {rank} positive eigenvalues, {k} requested")]
    InsufficientRank { rank: usize, k: usize },
    #[error("no sample of size {k} after {attempts} attempts")]
    SamplingExhausted { k: usize, attempts: usize },
    #[error("root finding failed: {0}")]
    RootFinding(String),
    #[error("requested {k} items from a pool of {available}")]
    NotEnoughPoints { k: usize, available: usize },
    #[error("maximum r² over the dataset is {0}, cannot normalize")]
    UnlearnableDataset(f64),
    #[error("interrupted")]
    Interrupted,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical routines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegeneratePartition(_)
                | Error::NotPositiveDefinite
                | Error::AllQualitiesZero
                | Error::InsufficientRank { .. }
                | Error::SamplingExhausted { .. }
                | Error::RootFinding(_)
                | Error::UnlearnableDataset(_)
        )
    }
}
