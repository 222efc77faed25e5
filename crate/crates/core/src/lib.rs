//! Random walks on Gromov-hyperbolic spaces.

// `!(x > 0.0)` checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod martingale;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};

/// Version of the CSV/JSON output schemas.
pub const SCHEMA_VERSION: u32 = 1;
