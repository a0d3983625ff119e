use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scheduling point ({x}, {y}) lies outside the workspace")]
    OutsideWorkspace { x: f64, y: f64 },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular frequency response at {freq_hz} Hz: {what}")]
    Singular { freq_hz: f64, what: String },

    #[error("frequency grid too coarse near {freq_hz} Hz (phase step {step_deg:.1} deg); refine the grid")]
    InsufficientGrid { freq_hz: f64, step_deg: f64 },

    #[error("loop gain never crosses 0 dB on the grid")]
    NoCrossover,

    #[error("surface fit rejected: {0}")]
    Fit(String),

    #[error("design infeasible: {0}")]
    Infeasible(String),

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("simulation diverged at t = {time_s} s (state norm {norm:.3e})")]
    Divergence { time_s: f64, norm: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the command-line exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Infeasible,
    Config,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Infeasible(_) | Error::Certification(_) | Error::Fit(_) => ErrorKind::Infeasible,
            Error::Config(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Model(_)
            | Error::Parameter(_)
            | Error::OutsideWorkspace { .. } => ErrorKind::Config,
            Error::Singular { .. }
            | Error::InsufficientGrid { .. }
            | Error::NoCrossover
            | Error::Divergence { .. } => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
