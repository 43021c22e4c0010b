//! The experiment commands. Each one writes its manifest first, then its
//! result files, and returns the in-memory summary it persisted.

use std::fs;
use std::path::{Path, PathBuf};

use nsgrl_core::agent::{evaluate, init_policy, train, EpisodeLog, EvalStep, NullProbe, Probe, StepLog, WallClock};
use nsgrl_core::baselines::{train_dqn_family, train_vanilla_reinforce, DqnVariant};
use nsgrl_core::env::{Env, EnvConfig, NetworkState};
use nsgrl_core::explainer::{cavi_fit, extract_explanation, ExplanationDoc};
use nsgrl_core::graph::encode_frozen;
use nsgrl_core::reasoner::{ExplanationShaper, Firing, Reasoner, RuleBase};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Model};
use crate::config::{AgentKind, ExperimentConfig};
use crate::error::CliError;
use crate::manifest::{Invocation, RunManifest};
use crate::metrics::{
    episodes_to_threshold, gap_cdf, in_band_accuracy, median, ninety_percent_threshold, over_fraction, tail_mean, under_fraction,
    CdfPoint,
};

pub const FINAL_WINDOW: usize = 10;

pub struct TrainedRun {
    pub agent: AgentKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeLog>,
    pub steps: Vec<StepLog>,
    pub checkpoint: Checkpoint,
}

impl TrainedRun {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.total_reward).collect()
    }
}

fn probe(cfg: &ExperimentConfig) -> Box<dyn Probe> {
    if cfg.run.wall_clock {
        Box::new(WallClock::default())
    } else {
        Box::new(NullProbe)
    }
}

pub fn reasoner(cfg: &ExperimentConfig) -> Result<Reasoner, CliError> {
    let rules = RuleBase::from_specs(&cfg.reasoner.rule_specs())?;
    Ok(Reasoner::new(cfg.reasoner.thresholds.clone(), rules)?)
}

/// Trains one agent on the environment seeded with `seed`.
pub fn train_agent(cfg: &ExperimentConfig, env_cfg: &EnvConfig, agent: AgentKind, seed: u64, record_steps: bool) -> Result<TrainedRun, CliError> {
    let mut env = Env::new(env_cfg.clone(), seed)?;
    let n_actions = env.action_space().len();
    let episodes = cfg.run.episodes;
    let mut probe = probe(cfg);
    let (model, logs, steps) = match agent {
        AgentKind::Tango | AgentKind::GnnReinforce => {
            let tc = cfg.agent.train_config(episodes, seed);
            let params = init_policy(&env, &tc)?;
            let out = if agent == AgentKind::Tango {
                let mut shaper = ExplanationShaper::new(cfg.shaping_explainer.clone(), reasoner(cfg)?, seed);
                train(&mut env, params, Some(&mut shaper), &tc, record_steps, probe.as_mut())?
            } else {
                train(&mut env, params, None, &tc, record_steps, probe.as_mut())?
            };
            (Model::Gnn(out.policy), out.episodes, out.steps)
        }
        AgentKind::Dqn | AgentKind::DoubleDqn | AgentKind::DuelingDqn => {
            let variant = match agent {
                AgentKind::Dqn => DqnVariant::Dqn,
                AgentKind::DoubleDqn => DqnVariant::Double,
                _ => DqnVariant::Dueling,
            };
            let out = train_dqn_family(&mut env, variant, &cfg.baselines.dqn.dqn_config(episodes, seed), probe.as_mut())?;
            (Model::Q(out.agent), out.episodes, Vec::new())
        }
        AgentKind::Reinforce => {
            let out = train_vanilla_reinforce(&mut env, &cfg.baselines.reinforce.reinforce_config(episodes, seed), probe.as_mut())?;
            (Model::Mlp(out.agent), out.episodes, Vec::new())
        }
    };
    Ok(TrainedRun {
        agent,
        seed,
        episodes: logs,
        steps,
        checkpoint: Checkpoint { agent, seed, chunk_size: env_cfg.chunk_size, n_actions, model },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub agent: AgentKind,
    pub seed: u64,
    pub noise_sigma: f64,
    pub trials: usize,
    pub n_steps: usize,
    pub in_band_accuracy: f64,
    pub over_fraction: f64,
    pub under_fraction: f64,
    pub mean_reward: f64,
    pub gap_cdf: Vec<CdfPoint>,
}

pub fn summarize(ck: &Checkpoint, env_cfg: &EnvConfig, sigma: f64, trials: usize, log: &[EvalStep]) -> EvalSummary {
    let gaps: Vec<f64> = log.iter().map(|s| s.f).collect();
    let band = &env_cfg.reward;
    EvalSummary {
        agent: ck.agent,
        seed: ck.seed,
        noise_sigma: sigma,
        trials,
        n_steps: log.len(),
        in_band_accuracy: in_band_accuracy(&gaps, band),
        over_fraction: over_fraction(&gaps, band),
        under_fraction: under_fraction(&gaps, band),
        mean_reward: log.iter().map(|s| s.reward).sum::<f64>() / log.len().max(1) as f64,
        gap_cdf: gap_cdf(&gaps),
    }
}

/// Greedy evaluation on a held-out environment stream for the seed.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, env_cfg: &EnvConfig, ck: &Checkpoint, seed: u64, sigma: f64, trials: usize) -> Result<(Vec<EvalStep>, EvalSummary), CliError> {
    ck.check_env(env_cfg)?;
    let eval_seed = seed.wrapping_add(cfg.run.eval_seed_offset);
    let mut env = Env::new(env_cfg.clone(), eval_seed)?;
    let log = evaluate(ck.model.greedy(), &mut env, trials, sigma, eval_seed ^ 0x6e6f_6973_65)?;
    let summary = summarize(ck, env_cfg, sigma, trials, &log);
    Ok((log, summary))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct EpisodeRow {
    agent: AgentKind,
    seed: u64,
    episode: usize,
    total_reward: f64,
    mean_shaped_bonus: f64,
    loss: f64,
    mean_entropy: f64,
    lr: f64,
    wall_clock_s: f64,
}

fn write_episodes(path: &Path, run: &TrainedRun) -> Result<(), CliError> {
    let rows: Vec<EpisodeRow> = run
        .episodes
        .iter()
        .map(|e| EpisodeRow {
            agent: run.agent,
            seed: run.seed,
            episode: e.episode,
            total_reward: e.total_reward,
            mean_shaped_bonus: e.mean_shaped_bonus,
            loss: e.loss,
            mean_entropy: e.mean_entropy,
            lr: e.lr,
            wall_clock_s: e.wall_clock_s,
        })
        .collect();
    write_csv(path, &rows)
}

fn write_manifest(out: &Path, invocation: &Invocation, cfg: &ExperimentConfig) -> Result<(), CliError> {
    ensure_dir(out)?;
    write_json(&out.join("manifest.json"), &RunManifest::new(invocation.clone(), cfg.clone()))
}

/// Dispatches a resolved invocation.
pub fn execute(invocation: &Invocation, cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    match invocation {
        Invocation::Train { agent, record_steps } => cmd_train(cfg, *agent, *record_steps, out).map(|_| ()),
        Invocation::Eval { checkpoint, seed, noise, trials } => cmd_eval(cfg, checkpoint, *seed, *noise, *trials, out).map(|_| ()),
        Invocation::Robustness { checkpoint, seed, trials } => cmd_robustness(cfg, checkpoint, *seed, *trials, out).map(|_| ()),
        Invocation::Scalability => cmd_scalability(cfg, out).map(|_| ()),
        Invocation::Explain { checkpoint, seed, state } => cmd_explain(cfg, checkpoint, *seed, *state, out).map(|_| ()),
        Invocation::Bench { agents } => cmd_bench(cfg, agents, out).map(|_| ()),
    }
}

pub fn cmd_train(cfg: &ExperimentConfig, agent: AgentKind, record_steps: bool, out: &Path) -> Result<Vec<TrainedRun>, CliError> {
    write_manifest(out, &Invocation::Train { agent, record_steps }, cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.run.seeds {
        let run = train_agent(cfg, &cfg.env, agent, seed, record_steps)?;
        let stem = format!("{}_seed{seed}", agent.label());
        write_episodes(&out.join(format!("{stem}_episodes.csv")), &run)?;
        if record_steps && !run.steps.is_empty() {
            write_csv(&out.join(format!("{stem}_steps.csv")), &run.steps)?;
        }
        run.checkpoint.save(&out.join(format!("{stem}_checkpoint.json")))?;
        runs.push(run);
    }
    Ok(runs)
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, seed: Option<u64>, noise: f64, trials: usize, out: &Path) -> Result<EvalSummary, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_env(&cfg.env)?;
    write_manifest(out, &Invocation::Eval { checkpoint: checkpoint.to_path_buf(), seed, noise, trials }, cfg)?;
    let (log, summary) = evaluate_checkpoint(cfg, &cfg.env, &ck, seed.unwrap_or(ck.seed), noise, trials)?;
    write_csv(&out.join("eval_steps.csv"), &log)?;
    write_json(&out.join("eval_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub noise_sigma: f64,
    pub in_band_accuracy: f64,
    pub over_fraction: f64,
    pub under_fraction: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub agent: AgentKind,
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<RobustnessRow>,
    /// Accuracy at the smallest sigma minus accuracy at the largest.
    pub degradation: f64,
    pub monotone_degradation: bool,
}

pub fn robustness_sweep(cfg: &ExperimentConfig, ck: &Checkpoint, seed: u64, trials: usize) -> Result<RobustnessReport, CliError> {
    let mut sigmas = cfg.run.noise_sigmas.clone();
    sigmas.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(sigmas.len());
    for &s in &sigmas {
        let (_, sum) = evaluate_checkpoint(cfg, &cfg.env, ck, seed, s, trials)?;
        rows.push(RobustnessRow {
            noise_sigma: s,
            in_band_accuracy: sum.in_band_accuracy,
            over_fraction: sum.over_fraction,
            under_fraction: sum.under_fraction,
            mean_reward: sum.mean_reward,
        });
    }
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a.in_band_accuracy, b.in_band_accuracy),
        _ => (0.0, 0.0),
    };
    Ok(RobustnessReport { agent: ck.agent, seed, trials, rows, degradation: first - last, monotone_degradation: last <= first })
}

pub fn cmd_robustness(cfg: &ExperimentConfig, checkpoint: &Path, seed: Option<u64>, trials: usize, out: &Path) -> Result<RobustnessReport, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_env(&cfg.env)?;
    write_manifest(out, &Invocation::Robustness { checkpoint: checkpoint.to_path_buf(), seed, trials }, cfg)?;
    let report = robustness_sweep(cfg, &ck, seed.unwrap_or(ck.seed), trials)?;
    write_csv(&out.join("robustness.csv"), &report.rows)?;
    write_json(&out.join("robustness.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub chunk_size: u32,
    pub n_actions: usize,
    pub seed: u64,
    pub in_band_accuracy: f64,
    pub final_reward: f64,
    pub episodes_to_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityGroup {
    pub chunk_size: u32,
    pub n_actions: usize,
    pub median_accuracy: f64,
    pub median_episodes_to_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityReport {
    pub agent: AgentKind,
    pub rows: Vec<ScalabilityRow>,
    pub groups: Vec<ScalabilityGroup>,
    /// Action count of the first chunk size over that of the last.
    pub action_ratio: f64,
}

pub fn cmd_scalability(cfg: &ExperimentConfig, out: &Path) -> Result<ScalabilityReport, CliError> {
    write_manifest(out, &Invocation::Scalability, cfg)?;
    let agent = cfg.run.agent;
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for &k in &cfg.run.chunk_sizes {
        let env_cfg = EnvConfig { chunk_size: k, ..cfg.env.clone() };
        let mut accs = Vec::new();
        let mut etts = Vec::new();
        for &seed in &cfg.run.seeds {
            let run = train_agent(cfg, &env_cfg, agent, seed, false)?;
            let (_, sum) = evaluate_checkpoint(cfg, &env_cfg, &run.checkpoint, seed, 0.0, cfg.run.eval_trials)?;
            let rewards = run.rewards();
            let ett = episodes_to_threshold(&rewards, ninety_percent_threshold(&rewards));
            accs.push(sum.in_band_accuracy);
            etts.push(ett as f64);
            rows.push(ScalabilityRow {
                chunk_size: k,
                n_actions: run.checkpoint.n_actions,
                seed,
                in_band_accuracy: sum.in_band_accuracy,
                final_reward: tail_mean(&rewards, FINAL_WINDOW),
                episodes_to_threshold: ett,
            });
        }
        groups.push(ScalabilityGroup {
            chunk_size: k,
            n_actions: env_cfg.action_space()?.len(),
            median_accuracy: median(&accs),
            median_episodes_to_threshold: median(&etts),
        });
    }
    let action_ratio = match (groups.first(), groups.last()) {
        (Some(a), Some(b)) => a.n_actions as f64 / b.n_actions as f64,
        _ => f64::NAN,
    };
    let report = ScalabilityReport { agent, rows, groups, action_ratio };
    write_csv(&out.join("scalability.csv"), &report.rows)?;
    write_json(&out.join("scalability.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub agent: AgentKind,
    pub seed: u64,
    pub state: [f64; 4],
    pub target_action: usize,
    pub target_prbs: u32,
    pub explanation: ExplanationDoc,
    pub r_star: f64,
    pub firings: Vec<Firing>,
}

pub fn cmd_explain(cfg: &ExperimentConfig, checkpoint: &Path, seed: Option<u64>, state: Option<[f64; 4]>, out: &Path) -> Result<ExplainReport, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_env(&cfg.env)?;
    let Model::Gnn(policy) = &ck.model else {
        return Err(CliError::Unsupported(format!("explanations are only defined for graph policies, not {}", ck.agent)));
    };
    write_manifest(out, &Invocation::Explain { checkpoint: checkpoint.to_path_buf(), seed, state }, cfg)?;
    let seed = seed.unwrap_or(ck.seed);
    let raw = match state {
        Some(s) => NetworkState::from_array(s),
        None => Env::new(cfg.env.clone(), seed.wrapping_add(cfg.run.eval_seed_offset))?.reset(),
    };
    if !raw.is_finite() {
        return Err(CliError::Core(nsgrl_core::Error::InvalidState("state components must be finite".into())));
    }
    let g = encode_frozen(&raw, &policy.scaler)?;
    let (q, target) = cavi_fit(&policy.params, &policy.activation, &g, &cfg.explainer, seed)?;
    let ex = extract_explanation(&q, g.feature_dim())?;
    let eval = reasoner(cfg)?.reason(&g, &ex)?;
    let action_space = cfg.env.action_space()?;
    let report = ExplainReport {
        agent: ck.agent,
        seed,
        state: raw.to_array(),
        target_action: target,
        target_prbs: action_space.prbs(target).expect("target from the policy head"),
        explanation: ex.to_doc(&g.edge_index)?,
        r_star: eval.r_star,
        firings: eval.firings,
    };
    write_json(&out.join("explanation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub agent: AgentKind,
    pub seed: u64,
    pub episode: usize,
    pub reward: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEvalRow {
    pub agent: AgentKind,
    pub seed: u64,
    pub final_reward: f64,
    pub episodes_to_threshold: usize,
    pub in_band_accuracy: f64,
    pub over_fraction: f64,
    pub under_fraction: f64,
    pub mean_wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: AgentKind,
    pub median_final_reward: f64,
    pub median_episodes_to_threshold: f64,
    pub median_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Agent whose curve defines each seed's 90% threshold.
    pub reference_agent: AgentKind,
    pub per_seed: Vec<BenchEvalRow>,
    pub agents: Vec<AgentSummary>,
}

impl BenchReport {
    pub fn summary(&self, agent: AgentKind) -> Option<&AgentSummary> {
        self.agents.iter().find(|a| a.agent == agent)
    }
}

/// Bench results plus the trained checkpoints, for callers that keep going.
pub struct BenchOutput {
    pub report: BenchReport,
    pub checkpoints: Vec<Checkpoint>,
}

pub fn cmd_bench(cfg: &ExperimentConfig, agents: &[AgentKind], out: &Path) -> Result<BenchOutput, CliError> {
    if agents.is_empty() {
        return Err(CliError::Config("agents: at least one agent is required".into()));
    }
    let mut agents = agents.to_vec();
    agents.sort();
    agents.dedup();
    write_manifest(out, &Invocation::Bench { agents: agents.clone() }, cfg)?;
    let ck_dir = out.join("checkpoints");
    ensure_dir(&ck_dir)?;
    let reference = if agents.contains(&AgentKind::GnnReinforce) { AgentKind::GnnReinforce } else { agents[0] };

    let mut curves = Vec::new();
    let mut per_seed = Vec::new();
    let mut checkpoints = Vec::new();
    for &seed in &cfg.run.seeds {
        let runs: Vec<TrainedRun> = agents.iter().map(|&a| train_agent(cfg, &cfg.env, a, seed, false)).collect::<Result<_, _>>()?;
        let reference_rewards = runs.iter().find(|r| r.agent == reference).expect("reference agent was trained").rewards();
        let threshold = ninety_percent_threshold(&reference_rewards);
        for run in runs {
            let rewards = run.rewards();
            let (_, sum) = evaluate_checkpoint(cfg, &cfg.env, &run.checkpoint, seed, 0.0, cfg.run.eval_trials)?;
            per_seed.push(BenchEvalRow {
                agent: run.agent,
                seed,
                final_reward: tail_mean(&rewards, FINAL_WINDOW),
                episodes_to_threshold: episodes_to_threshold(&rewards, threshold),
                in_band_accuracy: sum.in_band_accuracy,
                over_fraction: sum.over_fraction,
                under_fraction: sum.under_fraction,
                mean_wall_clock_s: run.episodes.iter().map(|e| e.wall_clock_s).sum::<f64>() / run.episodes.len().max(1) as f64,
            });
            curves.extend(run.episodes.iter().map(|e| BenchRow { agent: run.agent, seed, episode: e.episode, reward: e.total_reward, wall_clock_s: e.wall_clock_s }));
            run.checkpoint.save(&ck_dir.join(format!("{}_seed{seed}_checkpoint.json", run.agent.label())))?;
            checkpoints.push(run.checkpoint);
        }
    }
    let summaries = agents
        .iter()
        .map(|&a| {
            let rows: Vec<&BenchEvalRow> = per_seed.iter().filter(|r| r.agent == a).collect();
            let pick = |f: fn(&BenchEvalRow) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            AgentSummary {
                agent: a,
                median_final_reward: pick(|r| r.final_reward),
                median_episodes_to_threshold: pick(|r| r.episodes_to_threshold as f64),
                median_accuracy: pick(|r| r.in_band_accuracy),
            }
        })
        .collect();
    let report = BenchReport { reference_agent: reference, per_seed, agents: summaries };
    write_csv(&out.join("bench.csv"), &curves)?;
    write_csv(&out.join("bench_eval.csv"), &report.per_seed)?;
    write_json(&out.join("bench_summary.json"), &report)?;
    Ok(BenchOutput { report, checkpoints })
}

/// Re-executes a manifest's invocation with its configuration snapshot.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| CliError::io(manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
    manifest.config.validate()?;
    execute(&manifest.invocation, &manifest.config, out)
}

/// Output directory: an explicit `--out` wins over the configured one.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.run.output_dir.clone())
}
