//! Experiment driver for the neuro-symbolic slicing agent and its baselines.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod runner;
