//! Step measures, trajectory sampling and exact oracles.

pub mod measure;
pub mod oracle;
pub mod path;
pub mod rng;

pub use measure::{
    check_non_elementary, convolution_support, non_arithmetic_check, validate_measure,
    StepMeasure, ValidationReport, Verdict,
};
pub use oracle::{
    build_length_chain, ExactMoments, HarmonicLetterChain, LengthChainOracle, PrefixChainOracle,
};
pub use path::{sample_path, Trajectory, Walker};
pub use rng::{run_blocks, Merge, SeedSpec};
