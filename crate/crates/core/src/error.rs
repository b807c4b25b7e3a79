use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A non-finite or out-of-domain point was passed to a function of `x`.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Mass leaving the truncated grid in one step exceeded the tolerance.
    #[error(
        "grid too small: one-step leakage {leakage:.3e} exceeds {tolerance:.1e}; \
         extend the grid to at least [{required_lower:.4}, {required_upper:.4}]"
    )]
    GridTooSmall {
        leakage: f64,
        tolerance: f64,
        required_lower: f64,
        required_upper: f64,
    },

    #[error("no convergence after {iterations} iterations (last increment {last_increment:.3e})")]
    Convergence {
        iterations: usize,
        last_increment: f64,
    },

    /// The hypotheses of a uniform (whole-space) result do not hold.
    #[error("not applicable: {0}")]
    Applicability(String),

    #[error(
        "minorization violated at x={x}, y={y}: p(x,y)={density:.6e} < {floor:.6e}; \
         the small-set constant is too large"
    )]
    MinorizationViolation {
        x: f64,
        y: f64,
        density: f64,
        floor: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
