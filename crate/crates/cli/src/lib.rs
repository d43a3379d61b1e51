//! Library side of the `attrib` command: configuration and pipeline stages.

pub mod config;
pub mod pipeline;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::{run_pipeline, Out, RunArtifacts};
