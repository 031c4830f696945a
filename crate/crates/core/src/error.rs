use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Errors raised by the estimation core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The iterate left the finite range or exceeded the divergence guard.
    #[error("iterate diverged at iteration {iteration} (max |beta_j| = {max_abs})")]
    Divergence { iteration: usize, max_abs: f64 },

    #[error("restricted Hessian is singular")]
    SingularHessian,

    #[error("Newton iterations did not converge after {iterations} steps")]
    NotConverged { iterations: usize, iterate: Vec<f64> },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Decoding failures for the binary checkpoint format.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checkpoint dimension {0} overflows addressable size")]
    DimensionOverflow(u64),
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint contains non-finite values")]
    NonFinite,
}

/// A per-batch failure inside a stream, tagged with the batch index.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("batch {batch_index}: {source}")]
pub struct StreamError {
    pub batch_index: usize,
    #[source]
    pub source: Error,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}
