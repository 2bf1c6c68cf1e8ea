use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown category {value:?} for variable {variable:?}")]
    UnknownCategory { variable: String, value: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("leaf family {family} cannot model {payload} data")]
    FamilyMismatch { family: String, payload: String },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("line {line}: {message}")]
    Ingest { line: u64, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
