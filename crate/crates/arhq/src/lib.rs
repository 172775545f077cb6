//! File formats, synthetic layers and the command line around `arhq-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod report;
pub mod synth;
pub mod tensor;

pub use arhq_core as core;
pub use error::{IoError, Result};
