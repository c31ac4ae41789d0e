use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },

    #[error("empty table")]
    EmptyTable,

    #[error("missing value in column `{column}` at line {line}")]
    MissingValue { column: String, line: usize },

    #[error("label column must contain at least 2 distinct values, found {0}")]
    DegenerateLabels(usize),

    #[error("unstratifiable: class {class} has {count} sample(s), need at least {required}")]
    Unstratifiable {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("profile/pool id mismatch: pool has `{pool}`, profile has `{profile}`")]
    IdMismatch { pool: String, profile: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset `{dataset}`, seed {seed}: {source}")]
    Job {
        dataset: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Errors caused by bad user input (files, flags, configs) rather than by
    /// a failure while running an experiment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Job { .. })
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
