//! Flat-state comparison agents: the DQN family and vanilla REINFORCE.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{argmax, discounted_returns, entropy, sample_action, EpisodeLog, GreedyAgent, Probe};
use crate::env::{Env, NetworkState};
use crate::error::{invalid_arg, Error, Result};
use crate::graph::FeatureScaler;
use crate::nn::ops::{log_softmax, log_softmax_backward};
use crate::nn::{Mlp, Optimizer, OptimizerKind, ParamSet, QNetwork};

const AGENT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const INIT_STREAM: u64 = 0x6a09_e667_f3bc_c908;
const REPLAY_STREAM: u64 = 0x3c6e_f372_fe94_f82b;

/// `r` if terminal, else `r + gamma * max(q_target_next)`.
pub fn dqn_target(r: f64, done: bool, gamma: f64, q_target_next: &[f64]) -> f64 {
    if done {
        return r;
    }
    r + gamma * q_target_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// The online network picks the next action, the target network values it.
pub fn double_dqn_target(r: f64, done: bool, gamma: f64, q_online_next: &[f64], q_target_next: &[f64]) -> Result<f64> {
    if q_online_next.len() != q_target_next.len() || q_online_next.is_empty() {
        return Err(invalid_arg("online and target Q vectors must be non-empty and of equal length"));
    }
    if done {
        return Ok(r);
    }
    Ok(r + gamma * q_target_next[argmax(q_online_next)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; 4],
    pub action: usize,
    pub reward: f64,
    pub next_state: [f64; 4],
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid_arg("replay capacity must be positive"));
        }
        Ok(Self { capacity, data: Vec::with_capacity(capacity.min(1 << 16)), next: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Slot indices of a uniform batch.
    pub fn sample_indices(&mut self, batch: usize) -> Vec<usize> {
        let n = self.data.len();
        (0..batch).map(|_| self.rng.gen_range(0..n)).collect()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DqnVariant {
    Dqn,
    Double,
    Dueling,
}

impl DqnVariant {
    pub fn label(self) -> &'static str {
        match self {
            Self::Dqn => "dqn",
            Self::Double => "double_dqn",
            Self::Dueling => "dueling_dqn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub hidden: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync_steps: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all training steps over which epsilon decays linearly.
    pub eps_decay_fraction: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lr: 1e-3,
            hidden: 64,
            buffer_capacity: 10_000,
            batch_size: 64,
            target_sync_steps: 200,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            episodes: 70,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(self.lr > 0.0) {
            return Err(invalid_arg("gamma must lie in [0, 1] and lr be positive"));
        }
        if self.hidden == 0 || self.buffer_capacity == 0 || self.batch_size == 0 || self.target_sync_steps == 0 {
            return Err(invalid_arg("hidden, buffer_capacity, batch_size and target_sync_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) || !(self.eps_decay_fraction >= 0.0) {
            return Err(invalid_arg("epsilon schedule values must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Linear decay from `eps_start` to `eps_end` over the first
    /// `eps_decay_fraction` of `total_steps`, constant afterwards.
    pub fn epsilon(&self, step: usize, total_steps: usize) -> f64 {
        let horizon = self.eps_decay_fraction * total_steps as f64;
        if horizon <= 0.0 {
            return self.eps_end;
        }
        let frac = (step as f64 / horizon).min(1.0);
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

/// Entropy of the epsilon-greedy action distribution over `n` actions.
pub fn epsilon_greedy_entropy(eps: f64, n: usize) -> f64 {
    let n_f = n as f64;
    let mut lp = vec![(eps / n_f).ln(); n];
    lp[0] = (1.0 - eps + eps / n_f).ln();
    entropy(&lp)
}

/// Greedy Q-network agent with its input scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAgent {
    pub net: QNetwork,
    pub scaler: FeatureScaler,
}

impl GreedyAgent for QAgent {
    fn greedy_action(&self, observed: &NetworkState) -> Result<usize> {
        let q = self.net.q_values(&self.scaler.transform(observed))?;
        Ok(argmax(q.as_slice().expect("contiguous")))
    }
}

/// Mean squared TD error over a batch and its gradient.
pub fn q_regression_loss(net: &QNetwork, states: &Array2<f64>, actions: &[usize], targets: &[f64]) -> Result<(f64, QNetwork)> {
    let b = states.nrows();
    if actions.len() != b || targets.len() != b {
        return Err(invalid_arg("batch components differ in length"));
    }
    let (q, trace) = net.forward(states)?;
    let mut d = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for i in 0..b {
        let err = q[[i, actions[i]]] - targets[i];
        loss += err * err / b as f64;
        d[[i, actions[i]]] = 2.0 * err / b as f64;
    }
    Ok((loss, net.backward(&trace, &d)?))
}

fn rows(v: &[[f64; 4]]) -> Array2<f64> {
    Array2::from_shape_fn((v.len(), 4), |(i, j)| v[i][j])
}

#[derive(Debug, Clone)]
pub struct BaselineOutput<A> {
    pub agent: A,
    pub episodes: Vec<EpisodeLog>,
}

pub fn train_dqn_family(env: &mut Env, variant: DqnVariant, cfg: &DqnConfig, probe: &mut dyn Probe) -> Result<BaselineOutput<QAgent>> {
    cfg.validate()?;
    let n_actions = env.action_space().len();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
    let mut online = match variant {
        DqnVariant::Dueling => QNetwork::dueling(4, cfg.hidden, n_actions, &mut init_rng)?,
        _ => QNetwork::plain(4, cfg.hidden, n_actions, &mut init_rng)?,
    };
    let mut target = online.clone();
    let mut optimizer = Optimizer::new(OptimizerKind::Adam, &online);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AGENT_STREAM);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.seed ^ REPLAY_STREAM)?;
    let mut scaler = FeatureScaler::running();
    let t_e = env.config().steps_per_episode;
    let total_steps = cfg.episodes * t_e;
    let mut global_step = 0usize;
    let mut episodes = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        probe.start();
        let mut state = env.reset();
        let mut total = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        let mut ent_sum = 0.0;
        let mut steps = 0usize;
        for _ in 0..t_e {
            scaler.observe(&state);
            let x = scaler.transform(&state);
            let eps = cfg.epsilon(global_step, total_steps);
            ent_sum += epsilon_greedy_entropy(eps, n_actions);
            let action = if rng.gen::<f64>() < eps {
                rng.gen_range(0..n_actions)
            } else {
                argmax(online.q_values(&x)?.as_slice().expect("contiguous"))
            };
            let out = env.step(env.action_space().prbs(action).expect("valid index"))?;
            scaler.observe(&out.next_state);
            buffer.push(Transition { state: x, action, reward: out.reward, next_state: scaler.transform(&out.next_state), done: out.done });
            total += out.reward;
            steps += 1;
            global_step += 1;

            if buffer.len() >= cfg.batch_size {
                let idx = buffer.sample_indices(cfg.batch_size);
                let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
                let s = rows(&batch.iter().map(|t| t.state).collect::<Vec<_>>());
                let s2 = rows(&batch.iter().map(|t| t.next_state).collect::<Vec<_>>());
                let (q_next_target, _) = target.forward(&s2)?;
                let q_next_online = if variant == DqnVariant::Double { Some(online.forward(&s2)?.0) } else { None };
                let mut ys = Vec::with_capacity(batch.len());
                for (i, t) in batch.iter().enumerate() {
                    let qt = q_next_target.row(i).to_vec();
                    ys.push(match &q_next_online {
                        Some(qo) => double_dqn_target(t.reward, t.done, cfg.gamma, &qo.row(i).to_vec(), &qt)?,
                        None => dqn_target(t.reward, t.done, cfg.gamma, &qt),
                    });
                }
                let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
                let (loss, grads) = q_regression_loss(&online, &s, &actions, &ys)?;
                optimizer.step(&mut online, &grads, cfg.lr);
                loss_sum += loss;
                updates += 1;
            }
            if global_step % cfg.target_sync_steps == 0 {
                target = online.clone();
            }
            state = out.next_state;
            if out.done {
                break;
            }
        }
        if !online.all_finite() {
            return Err(Error::NumericalFailure { message: format!("Q-network diverged in episode {episode}"), trace: vec![] });
        }
        episodes.push(EpisodeLog {
            episode,
            total_reward: total,
            mean_shaped_bonus: 0.0,
            loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            mean_entropy: ent_sum / steps.max(1) as f64,
            lr: cfg.lr,
            wall_clock_s: probe.elapsed_s(),
        });
    }
    scaler.freeze();
    Ok(BaselineOutput { agent: QAgent { net: online, scaler }, episodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReinforceConfig {
    pub gamma: f64,
    pub lr: f64,
    pub hidden: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self { gamma: 0.5, lr: 1e-3, hidden: 64, episodes: 70, seed: 0 }
    }
}

/// Softmax policy over an MLP of the scaled flat state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub net: Mlp,
    pub scaler: FeatureScaler,
}

impl GreedyAgent for MlpPolicy {
    fn greedy_action(&self, observed: &NetworkState) -> Result<usize> {
        let logits = self.net.forward_one(&self.scaler.transform(observed))?;
        Ok(argmax(logits.as_slice().expect("contiguous")))
    }
}

/// `-sum_t w_t log pi(a_t | s_t)` and its gradient.
pub fn reinforce_loss(net: &Mlp, states: &Array2<f64>, actions: &[usize], weights: &[f64]) -> Result<(f64, Mlp)> {
    let b = states.nrows();
    if actions.len() != b || weights.len() != b {
        return Err(invalid_arg("batch components differ in length"));
    }
    let (logits, trace) = net.forward(states)?;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for i in 0..b {
        let lp = log_softmax(logits.row(i));
        loss -= weights[i] * lp[actions[i]];
        let mut d = Array1::zeros(lp.len());
        d[actions[i]] = -weights[i];
        d_logits.row_mut(i).assign(&log_softmax_backward(d.view(), lp.view()));
    }
    Ok((loss, net.backward(&trace, &d_logits).0))
}

/// REINFORCE weighted by raw discounted returns, one update per episode.
pub fn train_vanilla_reinforce(env: &mut Env, cfg: &ReinforceConfig, probe: &mut dyn Probe) -> Result<BaselineOutput<MlpPolicy>> {
    if !(0.0..=1.0).contains(&cfg.gamma) || !(cfg.lr > 0.0) || cfg.hidden == 0 {
        return Err(invalid_arg("invalid REINFORCE configuration"));
    }
    let n_actions = env.action_space().len();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
    let mut net = Mlp::init(&[4, cfg.hidden, cfg.hidden, n_actions], &mut init_rng)?;
    let mut optimizer = Optimizer::new(OptimizerKind::Adam, &net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AGENT_STREAM);
    let mut scaler = FeatureScaler::running();
    let t_e = env.config().steps_per_episode;
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        probe.start();
        let mut state = env.reset();
        let mut xs = Vec::with_capacity(t_e);
        let mut actions = Vec::with_capacity(t_e);
        let mut rewards = Vec::with_capacity(t_e);
        let mut ent_sum = 0.0;
        for _ in 0..t_e {
            let x = scaler.scale(&state);
            let lp = log_softmax(net.forward_one(&x)?.view());
            let (a, _, h) = sample_action(lp.as_slice().expect("contiguous"), &mut rng)?;
            ent_sum += h;
            let out = env.step(env.action_space().prbs(a).expect("valid index"))?;
            xs.push(x);
            actions.push(a);
            rewards.push(out.reward);
            state = out.next_state;
            if out.done {
                break;
            }
        }
        let returns = discounted_returns(&rewards, cfg.gamma);
        let (loss, grads) = reinforce_loss(&net, &rows(&xs), &actions, &returns)?;
        optimizer.step(&mut net, &grads, cfg.lr);
        if !net.all_finite() {
            return Err(Error::NumericalFailure { message: format!("policy diverged in episode {episode}"), trace: vec![loss] });
        }
        episodes.push(EpisodeLog {
            episode,
            total_reward: rewards.iter().sum(),
            mean_shaped_bonus: 0.0,
            loss,
            mean_entropy: ent_sum / rewards.len().max(1) as f64,
            lr: cfg.lr,
            wall_clock_s: probe.elapsed_s(),
        });
    }
    scaler.freeze();
    Ok(BaselineOutput { agent: MlpPolicy { net, scaler }, episodes })
}
