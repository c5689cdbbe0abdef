use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("line {line}, column `{column}`: cannot parse {value:?} as {expected}")]
    Parse {
        line: u64,
        column: String,
        value: String,
        expected: &'static str,
    },

    #[error("line {line}: label {value:?} is not 0 or 1")]
    LabelDomain { line: u64, value: String },

    #[error("line {line}, column `{column}`: missing value not allowed")]
    DisallowedMissing { line: u64, column: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("continuous column `{0}` has no observed values; mean imputation undefined")]
    AllMissing(String),

    #[error("column `{0}` still contains missing values; impute first")]
    NotImputed(String),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("operation requires a logistic link")]
    LinkMismatch,

    #[error("unsupported document: {0}")]
    Version(String),

    #[error("malformed document: {0}")]
    Document(String),

    #[error("row {row}: group `{group}` is not covered by the partition plan")]
    UnplannedGroup { row: usize, group: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
