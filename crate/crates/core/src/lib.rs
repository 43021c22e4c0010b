//! Neuro-symbolic graph reinforcement learning for PRB allocation.

pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod explainer;
pub mod graph;
pub mod nn;
pub mod reasoner;

pub use error::{Error, Result};
