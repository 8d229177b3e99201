use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid speeds: {0}")]
    InvalidSpeeds(String),

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("grid mismatch: expected {expected} cells, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("kernel iteration did not converge after {iterations} sweeps (last update {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("CFL condition violated: number {cfl} not in (0, 1]")]
    Cfl { cfl: f64 },

    #[error("simulation diverged at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },

    #[error("growth rate undefined: {0}")]
    UndefinedRate(String),

    #[error("root bracketing failed on branch {branch}: no sign change in [{lo}, {hi}]")]
    Bracketing { branch: String, lo: f64, hi: f64 },

    #[error("speed ordering violated: {0}")]
    SpeedOrdering(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
