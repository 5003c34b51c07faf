//! Command-line pipeline over phantom CT corpora: corpus synthesis, report
//! labeling, segmentation, ground-truth building, training, explanation
//! export and evaluation.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod layout;
pub mod pipeline;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
