use thiserror::Error;

use crate::distance::DistanceDiagnostics;
use crate::hamiltonian::BvpFailure;
use crate::controllability::SteerFailure;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("state blew up at t = {time:.6} (|q| = {norm:e})")]
    BlowUp { time: f64, norm: f64 },

    #[error("metric is not positive definite at the queried point")]
    NotPositiveDefinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model definition error: {0}")]
    ModelDefinition(String),

    #[error("shooting did not converge: {0}")]
    Bvp(Box<BvpFailure>),

    #[error("steering failed: {0}")]
    Steering(Box<SteerFailure>),

    #[error("distance solver stagnated: {reason}")]
    Stagnation {
        reason: String,
        diagnostics: Box<DistanceDiagnostics>,
    },

    #[error("fit needs at least {needed} successful points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

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

pub(crate) fn check_finite(what: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
