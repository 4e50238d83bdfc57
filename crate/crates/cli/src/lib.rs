//! Config-driven orchestration of the geotarget pipeline: ingest, contiguity
//! weights, spatial statistics, constrained clustering, PCA, the model grid
//! and targeting evaluation.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod stages;

pub use config::{LoadedConfig, PipelineConfig};
pub use error::{CliError, Result};
pub use stages::{run_pipeline, Context, Stage};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "GEOTARGET_THREADS";
