use thiserror::Error;

/// Errors raised by the dynamics, measure and pressure routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The orbit left the domain; carries the index of the first iterate outside it.
    #[error("orbit escaped the domain at iterate {0}")]
    OrbitEscaped(usize),

    #[error("index {index} out of range for orbit of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("derivative cocycle degenerated (singular value underflow)")]
    DegenerateCocycle,

    #[error("stable/unstable splitting is degenerate (minimal exponent {0:.3e})")]
    DegenerateSplitting(f64),

    #[error("empty sample")]
    EmptySample,

    #[error("empty set")]
    EmptySet,

    #[error("measures were built against different test-function banks ({0} vs {1})")]
    BankMismatch(String, String),

    #[error("sample only reaches mass {reached:.4}, below alpha = {alpha}")]
    CoverageUnreachable { reached: f64, alpha: f64 },

    #[error("no rectangle keeps a branch after separation")]
    NoViableRectangle,

    #[error("no admissible period: {0}")]
    InfeasiblePeriod(String),

    #[error("run-derived model carries no orbit context")]
    MissingOrbitContext,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model document: {0}")]
    Document(String),
}

pub type Result<T> = std::result::Result<T, Error>;
