use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown format `{name}`; valid formats: {valid}")]
    UnknownFormat { name: String, valid: String },

    #[error("unknown format id {0}")]
    UnknownFormatId(u16),

    #[error("invalid scale value {0}: must be finite and non-negative")]
    InvalidScale(f64),

    #[error("scale type {0} has no format-indicator bit")]
    IndicatorUnsupported(&'static str),

    #[error("scale byte {0:#04x} decodes to NaN")]
    NanScale(u8),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tensor contains a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("format {0} is not adaptive")]
    NotAdaptive(&'static str),

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake_case tag for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownFormat { .. } => "unknown_format",
            Error::UnknownFormatId(_) => "unknown_format_id",
            Error::InvalidScale(_) => "invalid_scale",
            Error::IndicatorUnsupported(_) => "indicator_unsupported",
            Error::NanScale(_) => "nan_scale",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::NotAdaptive(_) => "not_adaptive",
            Error::Corrupt(_) => "corrupt",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
        }
    }
}
