use std::path::PathBuf;

use nsgrl_core::reasoner::RuleSpec;
use serde::{Deserialize, Serialize};

use crate::config::{AgentKind, ExperimentConfig};

/// A command with every argument resolved, enough to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Train { agent: AgentKind, record_steps: bool },
    Eval { checkpoint: PathBuf, seed: Option<u64>, noise: f64, trials: usize },
    Robustness { checkpoint: PathBuf, seed: Option<u64>, trials: usize },
    Scalability,
    Explain { checkpoint: PathBuf, seed: Option<u64>, state: Option<[f64; 4]> },
    Bench { agents: Vec<AgentKind> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub invocation: Invocation,
    pub config: ExperimentConfig,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub rules: Vec<RuleSpec>,
    pub created_at: String,
}

impl RunManifest {
    pub fn new(invocation: Invocation, config: ExperimentConfig) -> Self {
        Self {
            invocation,
            seeds: config.run.seeds.clone(),
            rules: config.reasoner.rule_specs(),
            config,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
        }
    }
}
