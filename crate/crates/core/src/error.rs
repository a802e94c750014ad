use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge references unknown firm `{0}`")]
    UnknownFirm(String),

    #[error("duplicate firm id `{0}`")]
    DuplicateFirm(String),

    #[error("invalid industry code `{0}`: expected 4 digits or empty")]
    InvalidNace(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data that parsed but cannot be used (empty economy, too few
    /// points for a statistic, ...).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shock size mismatch for scenario {scenario}: computed {computed}, required {required}")]
    ShockSizeMismatch {
        scenario: usize,
        computed: f64,
        required: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by caller-supplied parameters rather than by
    /// the content of input files.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::ShockSizeMismatch { .. }
        )
    }
}
