use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image dimensions {rows}x{cols} are not 28x28")]
    DimMismatch { rows: usize, cols: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("a seed is required to record a dataset manifest")]
    SeedMissing,
    #[error("index out of range: {what} = {value} (limit {limit})")]
    IndexOutOfRange { what: &'static str, value: usize, limit: usize },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("negative count on line {line}")]
    NegativeCount { line: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("margin row has length {found}, expected {expected}")]
    RowLengthMismatch { found: usize, expected: usize },
    #[error("large-margin cosine loss requires a single-label target")]
    MultiLabelUnsupported,
    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),
    #[error("scale bound denominator {0} is not negative")]
    DegenerateDenominator(f64),
    #[error("temperature {0} must be positive")]
    InvalidTemperature(f64),
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("loss kind mmdb requires a margin table")]
    MissingMarginTable,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("no wrong predictions for bias factor {0}")]
    EmptyErrorSet(usize),
    #[error("need at least 3 samples for an embedding, found {0}")]
    TooFewSamples(usize),
    #[error("no completed runs found under {}", .0.display())]
    NoRunsFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short stable identifier, used for machine-parsable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "BadMagic",
            Error::Truncated { .. } => "Truncated",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::CountMismatch { .. } => "CountMismatch",
            Error::SeedMissing => "SeedMissing",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::Parse { .. } => "ParseError",
            Error::NegativeCount { .. } => "NegativeCount",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::RowLengthMismatch { .. } => "RowLengthMismatch",
            Error::MultiLabelUnsupported => "MultiLabelUnsupported",
            Error::InvalidProbability(_) => "InvalidProbability",
            Error::DegenerateDenominator(_) => "DegenerateDenominator",
            Error::InvalidTemperature(_) => "InvalidTemperature",
            Error::BadDimensions(_) => "BadDimensions",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::StaleCache => "StaleCache",
            Error::MissingMarginTable => "MissingMarginTable",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::NotADistribution(_) => "NotADistribution",
            Error::EmptyErrorSet(_) => "EmptyErrorSet",
            Error::TooFewSamples(_) => "TooFewSamples",
            Error::NoRunsFound(_) => "NoRunsFound",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
