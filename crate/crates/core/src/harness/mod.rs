//! Experiment configuration, stage pipeline and report output.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, Resolved};
pub use pipeline::{run_stages, Failure, Stage};
pub use report::{render_report, render_summary, write_outputs, Assertion, Outcome, RunOutput, RunReport};
