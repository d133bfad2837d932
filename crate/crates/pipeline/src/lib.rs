//! Panel workflow for bartlab: ingestion, configuration, staged execution and
//! run artifacts.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod fixture;
pub mod ingest;
pub mod prepare;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use stages::{run_all, run_stages, Context, Stage, StageOptions};
