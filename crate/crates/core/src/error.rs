use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("image has no positive intensity")]
    ZeroImage,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("(Ax+b) left the domain of the KL divergence at index {index} (value {value:e})")]
    NumericalDomain { index: usize, value: f64 },

    #[error("point is not feasible: {0}")]
    Infeasible(String),

    #[error("line search failed after {halvings} halvings ({context})")]
    LineSearch { halvings: usize, context: &'static str },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        })
    }
}
