use std::path::PathBuf;

/// Coarse failure categories; the CLI maps them onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("index {index} out of range (size {len})")]
    Index { index: usize, len: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("gap of {len} missing values starting at index {start} exceeds max_gap {max_gap}; split the series there")]
    GapTooLarge {
        start: usize,
        len: usize,
        max_gap: usize,
    },
    #[error("constant series (min == max == {0}); min-max scaling is undefined")]
    ConstantSeries(f64),
    #[error("insufficient data: series of length {len} cannot form windows of length {window}")]
    InsufficientData { len: usize, window: usize },
    #[error("split of {total} windows at ratio {ratio} leaves one side empty")]
    EmptySplit { total: usize, ratio: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("unsupported model version {0}")]
    Version(String),
    #[error("corrupt model file at byte {offset}: {message}")]
    Corrupt { offset: usize, message: String },
    #[error("{0} is undefined for this input")]
    Undefined(&'static str),
    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: String },
    #[error("training diverged at epoch {epoch} (last good epoch: {last_good:?})")]
    Diverged {
        epoch: usize,
        last_good: Option<usize>,
    },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Domain(_)
            | Error::NonFiniteGradient { .. }
            | Error::Diverged { .. }
            | Error::Contract(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
