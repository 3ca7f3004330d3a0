use thiserror::Error;

/// Errors raised by the laboratory.
///
/// Variants split into two families that the command line maps onto distinct
/// exit codes: bad input (`exit 2`) and numerical failure (`exit 3`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("power iteration did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },
    #[error("no positive eigenfunction: {0}")]
    NoPositiveEigenfunction(String),
    #[error("zero entry in eigenfunction at state {0}")]
    ZeroEigenfunction(usize),
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("map evaluation blew up at step {step}: {detail}")]
    BlowUp { step: usize, detail: String },
    #[error("ensemble collapse: {0}")]
    EnsembleCollapse(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidInput(_)
                | Error::Precondition(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
