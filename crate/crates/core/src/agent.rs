//! Graph-policy REINFORCE: trajectory collection, returns, normalised
//! advantages with an entropy bonus, and greedy evaluation.

use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Env, NetworkState};
use crate::error::{invalid_arg, Error, Result};
use crate::graph::{encode_frozen, state_to_graph, FeatureScaler, GraphState, N_NODE_FEATURES};
use crate::nn::{backward, forward, forward_eval, lr_schedule, ActivationConfig, ForwardTrace, Mode, Optimizer, OptimizerKind, ParamSet, PolicyArch, PolicyParameters};

/// Tolerance on `sum(exp(log_probs)) == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-6;
pub const ADVANTAGE_EPS: f64 = 1e-8;

const AGENT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const INIT_STREAM: u64 = 0x6a09_e667_f3bc_c908;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub entropy_weight: f64,
    pub episodes: usize,
    pub shaping_period: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub lr_step_size: usize,
    pub lr_gamma: f64,
    pub arch: PolicyArch,
    pub activation: ActivationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lr: 3e-3,
            entropy_weight: 0.01,
            episodes: 70,
            shaping_period: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            lr_step_size: 100,
            lr_gamma: 0.1,
            arch: PolicyArch::default(),
            activation: ActivationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid_arg(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid_arg("lr must be positive"));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(invalid_arg("entropy_weight must be non-negative"));
        }
        if self.shaping_period == 0 {
            return Err(invalid_arg("shaping_period must be at least 1"));
        }
        if self.lr_step_size == 0 || !(self.lr_gamma > 0.0) {
            return Err(invalid_arg("lr_step_size must be positive and lr_gamma positive"));
        }
        self.activation.validate()
    }
}

/// One decision step of an episode.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub graph: GraphState,
    pub action: usize,
    pub log_prob: f64,
    pub entropy: f64,
    pub base_reward: f64,
    pub shaped_reward: f64,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn shaped_rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.shaped_reward).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub normalized: Vec<f64>,
}

/// Draws an action; returns `(index, log_prob, entropy)`.
pub fn sample_action<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> Result<(usize, f64, f64)> {
    if log_probs.is_empty() || log_probs.iter().any(|lp| lp.is_nan() || *lp > 1e-12) {
        return Err(Error::InvalidDistribution(format!("{log_probs:?} are not log-probabilities")));
    }
    let total: f64 = log_probs.iter().map(|lp| lp.exp()).sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p == 0.0 {
            continue;
        }
        acc += p;
        chosen = Some(i);
        if u < acc {
            break;
        }
    }
    let idx = chosen.expect("at least one action has positive probability");
    Ok((idx, log_probs[idx], entropy(log_probs)))
}

pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp }).sum::<f64>()
}

/// `G_t = r_t + gamma * G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Mean baseline, scaled by the population standard deviation.
pub fn normalize_advantage(returns: &[f64]) -> TrajectoryStats {
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let normalized = if std < ADVANTAGE_EPS {
        vec![0.0; returns.len()]
    } else {
        returns.iter().map(|g| (g - mean) / (std + ADVANTAGE_EPS)).collect()
    };
    TrajectoryStats { returns: returns.to_vec(), mean, std, normalized }
}

/// `L = -sum_t log pi(a_t|s_t) adv_t - lambda_h sum_t H_t`.
///
/// Returns the loss and, per step, its gradient w.r.t. that step's
/// log-probability vector; the advantages are constants.
pub fn policy_loss(traj: &Trajectory, stats: &TrajectoryStats, entropy_weight: f64) -> Result<(f64, Vec<Array1<f64>>)> {
    if traj.len() != stats.normalized.len() {
        return Err(invalid_arg(format!("{} steps but {} advantages", traj.len(), stats.normalized.len())));
    }
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(traj.len());
    for (step, &adv) in traj.steps.iter().zip(&stats.normalized) {
        let lp = &step.trace.log_probs;
        let lp_a = lp[step.action];
        let h = entropy(lp.as_slice().expect("contiguous"));
        loss += -lp_a * adv - entropy_weight * h;
        let mut d = lp.mapv(|l| if l == f64::NEG_INFINITY { 0.0 } else { entropy_weight * l.exp() * (l + 1.0) });
        d[step.action] -= adv;
        upstream.push(d);
    }
    Ok((loss, upstream))
}

/// Supplies the auxiliary reward `r*` at shaping steps.
pub trait RewardShaper {
    fn shaping_bonus(
        &mut self,
        graph: &GraphState,
        params: &PolicyParameters,
        act: &ActivationConfig,
        episode: usize,
        step: usize,
    ) -> Result<f64>;
}

/// Source of elapsed time for the per-episode timing column.
pub trait Probe {
    fn start(&mut self);
    fn elapsed_s(&self) -> f64;
}

#[derive(Debug, Default)]
pub struct WallClock(Option<Instant>);

impl Probe for WallClock {
    fn start(&mut self) {
        self.0 = Some(Instant::now());
    }

    fn elapsed_s(&self) -> f64 {
        self.0.map(|t| t.elapsed().as_secs_f64()).unwrap_or(0.0)
    }
}

/// Always reports zero; makes every output column reproducible.
#[derive(Debug, Default)]
pub struct NullProbe;

impl Probe for NullProbe {
    fn start(&mut self) {}

    fn elapsed_s(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub total_reward: f64,
    pub mean_shaped_bonus: f64,
    pub loss: f64,
    pub mean_entropy: f64,
    pub lr: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub episode: usize,
    pub step: usize,
    pub action_prbs: u32,
    pub traffic: f64,
    pub served: f64,
    pub f: f64,
    pub reward: f64,
    pub r_star: f64,
}

/// Trained graph policy together with the frozen input scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnPolicy {
    pub params: PolicyParameters,
    pub scaler: FeatureScaler,
    pub activation: ActivationConfig,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: GnnPolicy,
    pub episodes: Vec<EpisodeLog>,
    pub steps: Vec<StepLog>,
}

/// Deterministic initial parameters for a run seed.
pub fn init_policy(env: &Env, cfg: &TrainConfig) -> Result<PolicyParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
    PolicyParameters::init(N_NODE_FEATURES, cfg.arch, env.action_space().len(), &mut rng)
}

/// Runs `cfg.episodes` episodes of REINFORCE with one update per episode.
pub fn train(
    env: &mut Env,
    params: PolicyParameters,
    mut shaper: Option<&mut dyn RewardShaper>,
    cfg: &TrainConfig,
    record_steps: bool,
    probe: &mut dyn Probe,
) -> Result<TrainOutput> {
    cfg.validate()?;
    params.validate()?;
    if params.n_actions() != env.action_space().len() {
        return Err(invalid_arg(format!(
            "policy has {} outputs but the action space has {} actions",
            params.n_actions(),
            env.action_space().len()
        )));
    }
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AGENT_STREAM);
    let mut scaler = FeatureScaler::running();
    let mut optimizer = Optimizer::new(cfg.optimizer, &params);
    let t_e = env.config().steps_per_episode;
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut steps = Vec::new();

    for episode in 0..cfg.episodes {
        probe.start();
        let mut state = env.reset();
        let mut traj = Trajectory::default();
        let mut base_total = 0.0;
        let mut bonus_total = 0.0;
        for t in 0..t_e {
            let graph = state_to_graph(&state, &mut scaler)?;
            let (log_probs, trace) = forward(&graph, &params, &cfg.activation, Mode::Train, &mut rng)?;
            let (action, log_prob, h) = sample_action(log_probs.as_slice().expect("contiguous"), &mut rng)?;
            let prbs = env.action_space().prbs(action).expect("index from the policy head");
            let out = env.step(prbs)?;
            let r_star = match shaper.as_deref_mut() {
                Some(s) if (t + 1) % cfg.shaping_period == 0 => s.shaping_bonus(&graph, &params, &cfg.activation, episode, t)?,
                _ => 0.0,
            };
            let shaped = out.reward + r_star;
            base_total += out.reward;
            bonus_total += r_star;
            if record_steps {
                steps.push(StepLog {
                    episode,
                    step: t,
                    action_prbs: prbs,
                    traffic: out.traffic_mbps,
                    served: out.served_mbps,
                    f: out.f,
                    reward: out.reward,
                    r_star,
                });
            }
            traj.steps.push(StepRecord { graph, action, log_prob, entropy: h, base_reward: out.reward, shaped_reward: shaped, trace });
            state = out.next_state;
            if out.done {
                break;
            }
        }
        let returns = discounted_returns(&traj.shaped_rewards(), cfg.gamma);
        let stats = normalize_advantage(&returns);
        let (loss, upstream) = policy_loss(&traj, &stats, cfg.entropy_weight)?;
        let mut grads = params.zeros_like();
        for (step, d) in traj.steps.iter().zip(&upstream) {
            let g = backward(&step.trace, &params, &cfg.activation, d.view())?;
            grads.add_scaled(&g.params, 1.0);
        }
        let lr = lr_schedule(episode, cfg.lr, cfg.lr_step_size, cfg.lr_gamma);
        optimizer.step(&mut params, &grads, lr);
        if !params.all_finite() || !loss.is_finite() {
            return Err(Error::NumericalFailure {
                message: format!("training diverged in episode {episode}"),
                trace: episodes.iter().map(|e: &EpisodeLog| e.loss).chain([loss]).collect(),
            });
        }
        let n = traj.len().max(1) as f64;
        episodes.push(EpisodeLog {
            episode,
            total_reward: base_total,
            mean_shaped_bonus: bonus_total / n,
            loss,
            mean_entropy: traj.steps.iter().map(|s| s.entropy).sum::<f64>() / n,
            lr,
            wall_clock_s: probe.elapsed_s(),
        });
    }
    scaler.freeze();
    Ok(TrainOutput { policy: GnnPolicy { params, scaler, activation: cfg.activation }, episodes, steps })
}

/// Anything that maps an observed state to a greedy action index.
pub trait GreedyAgent {
    fn greedy_action(&self, observed: &NetworkState) -> Result<usize>;
}

impl GreedyAgent for GnnPolicy {
    fn greedy_action(&self, observed: &NetworkState) -> Result<usize> {
        let g = encode_frozen(observed, &self.scaler)?;
        let lp = forward_eval(&g, &self.params, &self.activation)?;
        Ok(argmax(lp.as_slice().expect("contiguous")))
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStep {
    pub trial: usize,
    pub step: usize,
    pub action_prbs: u32,
    pub traffic: f64,
    pub served: f64,
    pub f: f64,
    pub in_band: bool,
    pub reward: f64,
}

/// Runs `n_trials` greedy episodes. Observations are perturbed by
/// `N(0, noise_sigma^2)` on every raw component; the environment itself is not.
pub fn evaluate(agent: &dyn GreedyAgent, env: &mut Env, n_trials: usize, noise_sigma: f64, noise_seed: u64) -> Result<Vec<EvalStep>> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(invalid_arg(format!("noise sigma {noise_sigma} must be finite and non-negative")));
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| invalid_arg(e.to_string()))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let t_e = env.config().steps_per_episode;
    let band = env.config().reward.clone();
    let mut log = Vec::with_capacity(n_trials * t_e);
    for trial in 0..n_trials {
        let mut state = env.reset();
        for step in 0..t_e {
            let observed = if noise_sigma > 0.0 {
                let mut v = state.to_array();
                v.iter_mut().for_each(|x| *x += noise.sample(&mut noise_rng));
                NetworkState::from_array(v)
            } else {
                state
            };
            let a = agent.greedy_action(&observed)?;
            let prbs = env.action_space().prbs(a).ok_or(Error::InvalidAction(a as u32))?;
            let out = env.step(prbs)?;
            log.push(EvalStep {
                trial,
                step,
                action_prbs: prbs,
                traffic: out.traffic_mbps,
                served: out.served_mbps,
                f: out.f,
                in_band: band.in_band(out.f),
                reward: out.reward,
            });
            state = out.next_state;
            if out.done {
                break;
            }
        }
    }
    Ok(log)
}
