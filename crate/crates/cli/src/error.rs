use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad config: {0}")]
    Config(String),

    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("stage failure: {0}")]
    Stage(String),

    #[error(transparent)]
    Core(#[from] pressure_core::Error),

    /// The family fails the hyperbolic-potential certificate; carries the gap report.
    #[error("potential certificate is not positive (gap {gap:.6e})")]
    CertificateNegative { gap: f64, report: String },
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Json(_) => EXIT_BAD_CONFIG,
            CliError::CertificateNegative { .. } => EXIT_VALIDATION,
            _ => EXIT_STAGE,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_STAGE: i32 = 3;
pub const EXIT_BAD_CONFIG: i32 = 4;
