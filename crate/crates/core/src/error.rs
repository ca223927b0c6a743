use thiserror::Error;

/// Errors produced by the corruption and defense library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Caller-supplied values violate an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes or lengths of the operands disagree.
    #[error("dimension mismatch: {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The (masked, top-n) gradient is identically zero, so no ascent
    /// direction exists.
    #[error("degenerate gradient: maximizer undefined")]
    DegenerateGradient,

    /// The requested norm order has no closed-form routine.
    #[error("unsupported norm order {0} for this operation")]
    UnsupportedNorm(String),

    /// A loss or intermediate quantity became NaN or infinite.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { what, expected, actual });
    }
    Ok(())
}
