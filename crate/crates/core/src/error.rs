use alloc::string::String;
use alloc::vec::Vec;

/// A forward-model evaluation that did not produce an output.
///
/// Carries the parameter point and whatever the solver reported about its
/// internal state, so the failure can be reproduced outside the chain.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("forward model failed at x = {x:?}: {message}")]
pub struct ForwardError {
    pub x: Vec<f64>,
    pub message: String,
}

impl ForwardError {
    pub fn new(x: &[f64], message: impl Into<String>) -> Self {
        Self {
            x: x.to_vec(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Forward(#[from] ForwardError),

    #[error("aborted after {attempts} consecutive forward-model failures: {last}")]
    Abort { attempts: u32, last: ForwardError },

    #[error("series has zero variance")]
    ZeroVariance,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
