//! Experiment harness for `paramcorrupt`: datasets, checkpoints, corruption
//! sweeps, per-layer probes, statistics and the command-line driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod idx;
pub mod stats;
pub mod sweep;

pub use error::{BenchError, Result};
