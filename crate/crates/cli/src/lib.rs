//! File-driven garment pipeline: align, deform, evaluate, texture, fit.

pub mod cli;
pub mod config;
pub mod demo;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{Overrides, PipelineConfig, ProviderKind};
pub use error::{ExitStatus, PipelineError, StageFailure};
pub use manifest::{Manifest, StageName, StageRecord, StageStatus};
pub use pipeline::{run_pipeline, Pipeline};
