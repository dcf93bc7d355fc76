//! Experiment configuration, checkpoints, metrics, reports and the command-line driver.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod reports;
pub mod cli;
