use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model mismatch: expected {expected}, got {found}")]
    ModelMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    /// A truncated boundary prefix is too short to resolve the requested value.
    #[error("truncation depth exceeded: need letter {needed} but prefix has depth {depth}")]
    Truncation { needed: usize, depth: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    #[error("horizon exceeded: requested {requested}, horizon {horizon}")]
    HorizonExceeded { requested: usize, horizon: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("target is not on the grid: {0}")]
    OffGrid(String),

    #[error("support overflow: more than {cap} elements; try a smaller convolution power")]
    SupportOverflow { cap: usize },

    #[error("centering solver diverged after {iterations} iterations (residual {residual:.3e})")]
    Diverged { iterations: usize, residual: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
