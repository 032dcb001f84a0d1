use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping of failures, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column `{0}` is missing from the header")]
    MissingColumn(String),
    #[error("line {line}: label `{value}` is not 0 or 1")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("line {line}: bad value `{value}`: {reason}")]
    BadField { line: u64, value: String, reason: String },
    #[error("window [{start}, {end}) is not a non-empty, hour-aligned range")]
    UnalignedWindow { start: i64, end: i64 },

    #[error("contingency table is empty")]
    EmptyTable,
    #[error("Renyi order must be positive, got {0}")]
    BadAlpha(f64),
    #[error("Renyi order {alpha} < 1 is undefined with an empty cell (level {level}, label {label})")]
    ZeroCellAtSmallAlpha { alpha: f64, level: usize, label: usize },
    #[error("factor {index} (`{name}`): {source}")]
    Factor {
        index: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dictionary fingerprint {found} does not match model fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("data not overdispersed relative to Poisson; zero-truncated Poisson fallback has rate {poisson_rate:.6}")]
    DegenerateData { poisson_rate: f64 },
    #[error("optimizer did not converge within {evaluations} evaluations")]
    NoConvergence { evaluations: usize },
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("series of length {len} is too short for window length {window}")]
    TooShort { len: usize, window: usize },
    #[error("intensity has zero total mass")]
    ZeroTotal,
    #[error("time {0} lies outside the clock domain")]
    OutOfDomain(f64),

    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidSchema(_) | Error::BadAlpha(_) | Error::BadSpec(_) => ErrorCategory::Usage,
            Error::Factor { source, .. } => source.category(),
            Error::ZeroCellAtSmallAlpha { .. } | Error::DegenerateData { .. } | Error::NoConvergence { .. } => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn in_factor(self, index: usize, name: &str) -> Error {
        Error::Factor { index, name: name.to_string(), source: Box::new(self) }
    }
}
