use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spectral spec inconsistent with S: {0}")]
    SpectralMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("trajectory diverged at t = {t}: non-finite state")]
    NonFiniteState { t: f64 },

    #[error("SDP infeasible: {0}")]
    Infeasible(String),

    #[error("solver numerical failure: {0}")]
    NumericalFailure(String),

    #[error("Sylvester equation is singular: closed loop shares an eigenvalue with S (min pivot {0:.3e})")]
    SingularSylvester(f64),

    #[error("need at least {needed} samples for k_max = {k_max}, got {got}")]
    InsufficientSamples { needed: usize, got: usize, k_max: usize },

    #[error("closed loop not settled: period-to-period residual {residual:.3e} > {threshold:.3e}")]
    NotSettled { residual: f64, threshold: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParams(_)
            | Error::DimensionMismatch(_)
            | Error::SpectralMismatch(_)
            | Error::Io(_) => 2,
            Error::Infeasible(_) => 3,
            Error::NumericalFailure(_)
            | Error::NonFiniteState { .. }
            | Error::SingularSylvester(_)
            | Error::InsufficientSamples { .. }
            | Error::NotSettled { .. } => 4,
        }
    }
}
