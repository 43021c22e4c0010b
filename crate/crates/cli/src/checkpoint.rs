use std::path::Path;

use nsgrl_core::agent::{GnnPolicy, GreedyAgent};
use nsgrl_core::baselines::{MlpPolicy, QAgent};
use nsgrl_core::env::EnvConfig;
use serde::{Deserialize, Serialize};

use crate::config::AgentKind;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Gnn(GnnPolicy),
    Q(QAgent),
    Mlp(MlpPolicy),
}

impl Model {
    pub fn greedy(&self) -> &dyn GreedyAgent {
        match self {
            Self::Gnn(p) => p,
            Self::Q(q) => q,
            Self::Mlp(m) => m,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Self::Gnn(p) => p.params.n_actions(),
            Self::Q(q) => q.net.n_actions(),
            Self::Mlp(m) => m.net.out_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent: AgentKind,
    pub seed: u64,
    pub chunk_size: u32,
    pub n_actions: usize,
    pub model: Model,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::CheckpointMismatch(format!("{} is not a valid checkpoint: {e}", path.display())))?;
        if ck.model.n_outputs() != ck.n_actions {
            return Err(CliError::CheckpointMismatch(format!(
                "model has {} outputs but the checkpoint declares {} actions",
                ck.model.n_outputs(),
                ck.n_actions
            )));
        }
        Ok(ck)
    }

    /// Fails unless the environment has exactly the checkpoint's action set.
    pub fn check_env(&self, env: &EnvConfig) -> Result<(), CliError> {
        let n = env.action_space()?.len();
        if env.chunk_size != self.chunk_size || n != self.n_actions {
            return Err(CliError::CheckpointMismatch(format!(
                "checkpoint was trained with chunk size {} ({} actions) but the environment uses chunk size {} ({} actions)",
                self.chunk_size, self.n_actions, env.chunk_size, n
            )));
        }
        Ok(())
    }
}
