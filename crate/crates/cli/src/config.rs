//! Experiment configuration: a TOML file, defaults for anything omitted,
//! and `key=value` overrides applied before validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nsgrl_core::agent::TrainConfig;
use nsgrl_core::baselines::{DqnConfig, ReinforceConfig};
use nsgrl_core::env::EnvConfig;
use nsgrl_core::explainer::ExplainerConfig;
use nsgrl_core::nn::{ActivationConfig, OptimizerKind, PolicyArch};
use nsgrl_core::reasoner::{default_rule_specs, ReasonerConfig, RuleBase, RuleSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Tango,
    GnnReinforce,
    Dqn,
    DoubleDqn,
    DuelingDqn,
    Reinforce,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] =
        [Self::Tango, Self::GnnReinforce, Self::Dqn, Self::DoubleDqn, Self::DuelingDqn, Self::Reinforce];

    pub fn label(self) -> &'static str {
        match self {
            Self::Tango => "tango",
            Self::GnnReinforce => "gnn_reinforce",
            Self::Dqn => "dqn",
            Self::DoubleDqn => "double_dqn",
            Self::DuelingDqn => "dueling_dqn",
            Self::Reinforce => "reinforce",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| format!("unknown agent '{s}' (expected one of tango, gnn_reinforce, dqn, double_dqn, dueling_dqn, reinforce)"))
    }
}

/// Policy-gradient settings shared by `tango` and `gnn_reinforce`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub gamma: f64,
    pub lr: f64,
    pub entropy_weight: f64,
    pub shaping_period: usize,
    pub optimizer: OptimizerKind,
    pub lr_step_size: usize,
    pub lr_gamma: f64,
    pub arch: PolicyArch,
    pub activation: ActivationConfig,
}

impl Default for AgentSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            gamma: t.gamma,
            lr: t.lr,
            entropy_weight: t.entropy_weight,
            shaping_period: t.shaping_period,
            optimizer: t.optimizer,
            lr_step_size: t.lr_step_size,
            lr_gamma: t.lr_gamma,
            arch: t.arch,
            activation: t.activation,
        }
    }
}

impl AgentSection {
    pub fn train_config(&self, episodes: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            lr: self.lr,
            entropy_weight: self.entropy_weight,
            episodes,
            shaping_period: self.shaping_period,
            seed,
            optimizer: self.optimizer,
            lr_step_size: self.lr_step_size,
            lr_gamma: self.lr_gamma,
            arch: self.arch,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnSection {
    pub gamma: f64,
    pub lr: f64,
    pub hidden: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync_steps: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_fraction: f64,
}

impl Default for DqnSection {
    fn default() -> Self {
        let d = DqnConfig::default();
        Self {
            gamma: d.gamma,
            lr: d.lr,
            hidden: d.hidden,
            buffer_capacity: d.buffer_capacity,
            batch_size: d.batch_size,
            target_sync_steps: d.target_sync_steps,
            eps_start: d.eps_start,
            eps_end: d.eps_end,
            eps_decay_fraction: d.eps_decay_fraction,
        }
    }
}

impl DqnSection {
    pub fn dqn_config(&self, episodes: usize, seed: u64) -> DqnConfig {
        DqnConfig {
            gamma: self.gamma,
            lr: self.lr,
            hidden: self.hidden,
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            target_sync_steps: self.target_sync_steps,
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            eps_decay_fraction: self.eps_decay_fraction,
            episodes,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReinforceSection {
    pub gamma: f64,
    pub lr: f64,
    pub hidden: usize,
}

impl Default for ReinforceSection {
    fn default() -> Self {
        let r = ReinforceConfig::default();
        Self { gamma: r.gamma, lr: r.lr, hidden: r.hidden }
    }
}

impl ReinforceSection {
    pub fn reinforce_config(&self, episodes: usize, seed: u64) -> ReinforceConfig {
        ReinforceConfig { gamma: self.gamma, lr: self.lr, hidden: self.hidden, episodes, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesSection {
    pub dqn: DqnSection,
    pub reinforce: ReinforceSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReasonerSection {
    pub thresholds: ReasonerConfig,
    /// `None` selects the two built-in rules; an empty list disables shaping.
    pub rules: Option<Vec<RuleSpec>>,
}

impl ReasonerSection {
    pub fn rule_specs(&self) -> Vec<RuleSpec> {
        self.rules.clone().unwrap_or_else(|| default_rule_specs(&self.thresholds))
    }
}

/// The cheaper explainer run inside the training loop.
pub fn default_shaping_explainer() -> ExplainerConfig {
    ExplainerConfig { mc_samples: 4, block_steps: 5, max_iters: 4, ..Default::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub eval_trials: usize,
    pub noise_sigmas: Vec<f64>,
    pub chunk_sizes: Vec<u32>,
    pub output_dir: PathBuf,
    /// Fill `wall_clock_s` with measured times. Off by default so that
    /// every output is reproducible byte for byte.
    pub wall_clock: bool,
    /// Offset added to the run seed for evaluation environments.
    pub eval_seed_offset: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            agent: AgentKind::Tango,
            seeds: vec![0, 1, 2, 3, 4],
            episodes: 70,
            eval_trials: 40,
            noise_sigmas: (0..=10).map(f64::from).collect(),
            chunk_sizes: vec![2, 5],
            output_dir: PathBuf::from("runs"),
            wall_clock: false,
            eval_seed_offset: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentSection,
    pub explainer: ExplainerConfig,
    pub shaping_explainer: ExplainerConfig,
    pub reasoner: ReasonerSection,
    pub baselines: BaselinesSection,
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentSection::default(),
            explainer: ExplainerConfig::default(),
            shaping_explainer: default_shaping_explainer(),
            reasoner: ReasonerSection::default(),
            baselines: BaselinesSection::default(),
            run: RunSection::default(),
        }
    }
}

fn cfg_err(key: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    /// Semantic checks that go beyond the schema.
    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate().map_err(|e| cfg_err("env", e))?;
        self.agent.train_config(self.run.episodes, 0).validate().map_err(|e| cfg_err("agent", e))?;
        self.explainer.validate().map_err(|e| cfg_err("explainer", e))?;
        self.shaping_explainer.validate().map_err(|e| cfg_err("shaping_explainer", e))?;
        self.reasoner.thresholds.validate().map_err(|e| cfg_err("reasoner.thresholds", e))?;
        RuleBase::from_specs(&self.reasoner.rule_specs()).map_err(|e| cfg_err("reasoner.rules", e))?;
        self.baselines.dqn.dqn_config(self.run.episodes, 0).validate().map_err(|e| cfg_err("baselines.dqn", e))?;
        if self.run.seeds.is_empty() {
            return Err(cfg_err("run.seeds", "at least one seed is required"));
        }
        if self.run.episodes == 0 {
            return Err(cfg_err("run.episodes", "must be positive"));
        }
        if self.run.eval_trials == 0 {
            return Err(cfg_err("run.eval_trials", "must be positive"));
        }
        if self.run.noise_sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(cfg_err("run.noise_sigmas", "values must be finite and non-negative"));
        }
        for &k in &self.run.chunk_sizes {
            let mut env = self.env.clone();
            env.chunk_size = k;
            env.validate().map_err(|e| cfg_err("run.chunk_sizes", e))?;
        }
        Ok(())
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Applies one `dotted.key=value` override.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key '{key}' is malformed")));
    }
    let mut table = root;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{}: not a section, cannot set '{key}'", parts[..=i].join("."))))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

fn deserialize(table: toml::Table) -> Result<ExperimentConfig, CliError> {
    let de = toml::Value::Table(table);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })
}

/// Reads the file (if any), applies overrides, and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg = deserialize(table)?;
    cfg.validate()?;
    Ok(cfg)
}
