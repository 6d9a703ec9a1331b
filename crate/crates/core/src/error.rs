use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset} ({field}): {message}")]
    Format {
        offset: usize,
        field: &'static str,
        message: String,
    },

    #[error("unsupported NIfTI datatype code {0} (expected 2, 4 or 16)")]
    UnsupportedDatatype(i16),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate intensities: {0}")]
    DegenerateIntensity(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate mixture fit: {0}")]
    DegenerateFit(String),

    #[error("ambiguous tissue assignment: {0}")]
    AmbiguousAssignment(String),

    #[error("ill-conditioned system (condition estimate {condition:e}): {context}")]
    Conditioning { condition: f64, context: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
}

impl Error {
    /// Short machine-friendly class name, used for CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::UnsupportedDatatype(_) => "unsupported-datatype",
            Error::Truncated { .. } => "truncation",
            Error::Validation(_) => "validation",
            Error::Domain(_) => "domain",
            Error::DegenerateIntensity(_) => "degenerate-intensity",
            Error::Estimation(_) => "estimation",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::DegenerateFit(_) => "degenerate-fit",
            Error::AmbiguousAssignment(_) => "ambiguous-assignment",
            Error::Conditioning { .. } => "conditioning",
            Error::Fit(_) => "fit",
            Error::Bounds(_) => "bounds",
            Error::Coverage(_) => "coverage",
            Error::Usage(_) => "usage",
            Error::Parse { .. } => "parse",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
