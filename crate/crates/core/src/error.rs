use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature refinement did not converge after {levels} levels (worst integrand: {worst}, change {change:.3e})")]
    QuadratureNotConverged {
        levels: usize,
        worst: String,
        change: f64,
    },

    #[error("{which} is not positive definite; use a denser quadrature rule or enable diagonal jitter")]
    NotPositiveDefinite { which: &'static str },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last increment {residual:.3e})")]
    FixedPointDiverged { iterations: usize, residual: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Domain(_) => 2,
            Error::FixedPointDiverged { .. } => 3,
            Error::StepFailed { source, .. } => source.exit_code(),
            Error::NotPositiveDefinite { .. } | Error::QuadratureNotConverged { .. } => 4,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
