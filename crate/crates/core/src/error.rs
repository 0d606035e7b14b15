use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the CLI exit code they map to: configuration
/// problems (2), bad or incomplete data (3) and numerical failures (4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unrecoverable trace: {0}")]
    UnrecoverableTrace(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("rescale error: {0}")]
    Rescale(String),
    #[error("undefined statistic: {0}")]
    Undefined(String),
    #[error("non-invertible model: {0}")]
    NonInvertible(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    /// Short machine-readable identifier of the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::InvalidInput(_) => "invalid-input",
            Error::Domain(_) => "domain",
            Error::InsufficientData(_) => "insufficient-data",
            Error::FitFailure(_) => "fit-failure",
            Error::Calibration(_) => "calibration-error",
            Error::DegenerateCalibration(_) => "degenerate-calibration",
            Error::InvalidModel(_) => "invalid-model",
            Error::UnrecoverableTrace(_) => "unrecoverable-trace",
            Error::Alignment(_) => "alignment-error",
            Error::InvalidInterval(_) => "invalid-interval",
            Error::MissingData(_) => "missing-data",
            Error::DegenerateConfiguration(_) => "degenerate-configuration",
            Error::Rescale(_) => "rescale-error",
            Error::Undefined(_) => "undefined",
            Error::NonInvertible(_) => "non-invertible-model",
            Error::Training(_) => "training-error",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::Config(_) => "config-error",
            Error::Io { .. } => "io-error",
            Error::Parse { .. } => "parse-error",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::FitFailure(_)
            | Error::DegenerateCalibration(_)
            | Error::NonInvertible(_)
            | Error::DegenerateConfiguration(_)
            | Error::Undefined(_)
            | Error::Rescale(_)
            | Error::Training(_) => 4,
            _ => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
