//! Configuration, datasets and the inference pipelines.

pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod run;

pub use config::{PipelineConfig, ViewPreset, Views};
pub use pipeline::{conditional_generate, generate_textures, unconditional_generate, Generation, Mode, Model, Report, StyleSource};
