//! Single-cell gNB simulator.
//!
//! Each decision step the agent observes a [`NetworkState`], picks a PRB
//! allocation from the [`ActionSpace`], and is scored on the allocation gap
//! `f = traffic - lambda_w * served`. Traffic is a superposition of bursty
//! on/off sources and the channel quality follows a clamped Gaussian walk.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    pub n_prbs: u32,
    pub bandwidth_mhz: f64,
    pub scs_khz: f64,
    pub prb_bandwidth_mhz: f64,
    /// Fraction of the raw Shannon rate left after control/reference overhead.
    pub efficiency: f64,
    pub snr_floor_db: f64,
    pub snr_ceil_db: f64,
    /// Cap on the per-PRB spectral efficiency, bits/s/Hz.
    pub spectral_eff_cap: f64,
    /// Standard deviation of the per-step SNR walk, dB.
    pub snr_walk_sigma_db: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            n_prbs: 52,
            bandwidth_mhz: 10.0,
            scs_khz: 15.0,
            prb_bandwidth_mhz: 0.18,
            efficiency: 0.75,
            snr_floor_db: 5.0,
            snr_ceil_db: 30.0,
            spectral_eff_cap: 6.0,
            snr_walk_sigma_db: 1.0,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_prbs == 0 {
            return Err(invalid_arg("n_prbs must be positive"));
        }
        if !(self.prb_bandwidth_mhz > 0.0) {
            return Err(invalid_arg("prb_bandwidth_mhz must be positive"));
        }
        if !(self.snr_floor_db < self.snr_ceil_db) {
            return Err(invalid_arg("snr_floor_db must be below snr_ceil_db"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid_arg("efficiency must lie in (0, 1]"));
        }
        if !(self.spectral_eff_cap > 0.0) || !(self.snr_walk_sigma_db >= 0.0) {
            return Err(invalid_arg("spectral_eff_cap must be positive and snr_walk_sigma_db non-negative"));
        }
        Ok(())
    }
}

/// Allowed PRB allocations `{n * chunk : n >= 1, n * chunk <= a_max}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    chunk_size: u32,
    a_max: u32,
    actions: Vec<u32>,
}

impl ActionSpace {
    pub fn chunk_size(&self) -> u32 {
        self.chunk_size
    }

    pub fn a_max(&self) -> u32 {
        self.a_max
    }

    pub fn actions(&self) -> &[u32] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// PRB count for an action index.
    pub fn prbs(&self, index: usize) -> Option<u32> {
        self.actions.get(index).copied()
    }

    pub fn index_of(&self, prbs: u32) -> Option<usize> {
        if prbs == 0 || prbs % self.chunk_size != 0 || prbs > self.a_max {
            return None;
        }
        Some((prbs / self.chunk_size - 1) as usize)
    }
}

pub fn build_action_space(chunk_size: i64, a_max: i64) -> Result<ActionSpace> {
    if chunk_size <= 0 || a_max <= 0 || chunk_size > a_max {
        return Err(invalid_arg(format!(
            "chunk size {chunk_size} must satisfy 0 < chunk <= a_max ({a_max})"
        )));
    }
    let (chunk_size, a_max) = (chunk_size as u32, a_max as u32);
    let actions = (1..=a_max / chunk_size).map(|n| n * chunk_size).collect();
    Ok(ActionSpace { chunk_size, a_max, actions })
}

/// Observation at decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub snr_db: f64,
    pub traffic_mbps: f64,
    pub residual_mbps: f64,
    pub gap_mbps: f64,
}

impl NetworkState {
    pub fn new(snr_db: f64, traffic_mbps: f64, residual_mbps: f64, gap_mbps: f64) -> Self {
        Self { snr_db, traffic_mbps, residual_mbps, gap_mbps }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.snr_db, self.traffic_mbps, self.residual_mbps, self.gap_mbps]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    /// In-band reward is `f + B`, exactly as the piecewise definition reads.
    Literal,
    /// Base term is `-|f|`, so every branch prefers a smaller gap.
    #[default]
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub delta_over: f64,
    pub delta_under: f64,
    pub bonus: f64,
    pub p_over: f64,
    pub p_under: f64,
    pub lambda_w: f64,
    pub base_mode: BaseMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            delta_over: -2.0,
            delta_under: 2.0,
            bonus: 1.0,
            p_over: 5.0,
            p_under: 5.0,
            lambda_w: 1.0,
            base_mode: BaseMode::Magnitude,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_over < self.delta_under) {
            return Err(invalid_arg("delta_over must be below delta_under"));
        }
        if !(self.bonus >= 0.0 && self.p_over >= 0.0 && self.p_under >= 0.0) {
            return Err(invalid_arg("bonus and penalties must be non-negative"));
        }
        Ok(())
    }

    pub fn in_band(&self, f: f64) -> bool {
        f >= self.delta_over && f <= self.delta_under
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardBranch {
    InBand,
    OverProvisioned,
    UnderProvisioned,
}

pub fn reward_branch(f: f64, cfg: &RewardConfig) -> RewardBranch {
    if f < cfg.delta_over {
        RewardBranch::OverProvisioned
    } else if f > cfg.delta_under {
        RewardBranch::UnderProvisioned
    } else {
        RewardBranch::InBand
    }
}

/// `f = traffic - lambda_w * served`; positive means under-provisioned.
pub fn compute_objective(traffic_mbps: f64, served_mbps: f64, lambda_w: f64) -> f64 {
    traffic_mbps - lambda_w * served_mbps
}

pub fn compute_reward(f: f64, cfg: &RewardConfig) -> f64 {
    let base = match cfg.base_mode {
        BaseMode::Literal => f,
        BaseMode::Magnitude => -f.abs(),
    };
    match reward_branch(f, cfg) {
        RewardBranch::InBand => base + cfg.bonus,
        RewardBranch::OverProvisioned => base - cfg.p_over,
        RewardBranch::UnderProvisioned => base - cfg.p_under,
    }
}

/// Served throughput for `n_prbs` PRBs at the given SNR, Mbps.
pub fn prb_capacity(n_prbs: i64, snr_db: f64, cfg: &CellConfig) -> Result<f64> {
    if n_prbs < 0 {
        return Err(invalid_arg(format!("negative PRB count {n_prbs}")));
    }
    if n_prbs > cfg.n_prbs as i64 {
        return Err(invalid_arg(format!("{n_prbs} PRBs exceeds the cell's {}", cfg.n_prbs)));
    }
    Ok(n_prbs as f64 * cfg.prb_bandwidth_mhz * cfg.efficiency * spectral_efficiency(snr_db, cfg))
}

pub fn spectral_efficiency(snr_db: f64, cfg: &CellConfig) -> f64 {
    let linear = 10f64.powf(snr_db / 10.0);
    (1.0 + linear).log2().min(cfg.spectral_eff_cap)
}

/// Clamped walk step for an explicit standard-deviation-scaled draw.
pub fn snr_after_draw(prev_db: f64, draw_db: f64, cfg: &CellConfig) -> f64 {
    (prev_db + draw_db).clamp(cfg.snr_floor_db, cfg.snr_ceil_db)
}

pub fn simulate_snr<R: Rng + ?Sized>(prev_db: f64, cfg: &CellConfig, rng: &mut R) -> f64 {
    if cfg.snr_walk_sigma_db == 0.0 {
        return prev_db.clamp(cfg.snr_floor_db, cfg.snr_ceil_db);
    }
    let draw: f64 = rng.sample(rand_distr::StandardNormal);
    snr_after_draw(prev_db, cfg.snr_walk_sigma_db * draw, cfg)
}

/// One bursty traffic flow. While a burst is active the flow sends at
/// `in_burst_rate_mbps`; bursts start as Poisson arrivals while the flow is
/// idle and last an exponentially distributed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstSource {
    pub burst_arrival_rate: f64,
    pub in_burst_rate_mbps: f64,
    pub mean_duration_s: f64,
}

impl BurstSource {
    /// Rate of a flow sending `packets_per_s` packets of `packet_bytes` bytes.
    pub fn packet_rate_mbps(packets_per_s: f64, packet_bytes: f64) -> f64 {
        packets_per_s * packet_bytes * 8.0 / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficModel {
    pub sources: Vec<BurstSource>,
    pub step_seconds: f64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        let rate = BurstSource::packet_rate_mbps(1000.0, 1024.0);
        Self {
            sources: vec![
                BurstSource { burst_arrival_rate: 0.1, in_burst_rate_mbps: rate, mean_duration_s: 10.0 },
                BurstSource { burst_arrival_rate: 0.1, in_burst_rate_mbps: rate, mean_duration_s: 15.0 },
            ],
            step_seconds: 1.0,
        }
    }
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_seconds > 0.0) {
            return Err(invalid_arg("step_seconds must be positive"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.burst_arrival_rate >= 0.0 && s.in_burst_rate_mbps > 0.0 && s.mean_duration_s > 0.0) {
                return Err(invalid_arg(format!("traffic source {i} has a non-positive rate or duration")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub source: usize,
    pub rate_mbps: f64,
    pub remaining_s: f64,
}

/// Advances the burst population by one step and returns the offered load.
///
/// Existing bursts age by `step_seconds` and expire once their remaining time
/// is used up; idle sources then draw Poisson arrivals for the step.
pub fn generate_traffic<R: Rng + ?Sized>(model: &TrafficModel, bursts: &mut Vec<Burst>, rng: &mut R) -> f64 {
    for b in bursts.iter_mut() {
        b.remaining_s -= model.step_seconds;
    }
    bursts.retain(|b| b.remaining_s > 0.0);
    for (i, src) in model.sources.iter().enumerate() {
        if bursts.iter().any(|b| b.source == i) {
            continue;
        }
        let mean_arrivals = src.burst_arrival_rate * model.step_seconds;
        if mean_arrivals <= 0.0 {
            continue;
        }
        let arrivals: f64 = Poisson::new(mean_arrivals).expect("positive mean").sample(rng);
        if arrivals >= 1.0 {
            bursts.push(Burst { source: i, rate_mbps: src.in_burst_rate_mbps, remaining_s: sample_duration(src, rng) });
        }
    }
    active_load(bursts)
}

pub fn active_load(bursts: &[Burst]) -> f64 {
    bursts.iter().map(|b| b.rate_mbps).sum()
}

fn sample_duration<R: Rng + ?Sized>(src: &BurstSource, rng: &mut R) -> f64 {
    let d: f64 = Exp::new(1.0 / src.mean_duration_s).expect("positive mean").sample(rng);
    d.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub cell: CellConfig,
    pub reward: RewardConfig,
    pub traffic: TrafficModel,
    pub chunk_size: u32,
    pub steps_per_episode: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            cell: CellConfig::default(),
            reward: RewardConfig::default(),
            traffic: TrafficModel::default(),
            chunk_size: 2,
            steps_per_episode: 100,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.reward.validate()?;
        self.traffic.validate()?;
        if self.steps_per_episode == 0 {
            return Err(invalid_arg("steps_per_episode must be positive"));
        }
        build_action_space(self.chunk_size as i64, self.cell.n_prbs as i64).map(|_| ())
    }

    pub fn action_space(&self) -> Result<ActionSpace> {
        build_action_space(self.chunk_size as i64, self.cell.n_prbs as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: NetworkState,
    pub reward: f64,
    pub f: f64,
    pub done: bool,
    pub traffic_mbps: f64,
    pub served_mbps: f64,
}

/// Snapshot of the mutable simulator state.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub current: NetworkState,
    pub active_bursts: Vec<Burst>,
    pub time_step: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    actions: ActionSpace,
    state: EnvState,
}

impl Env {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let actions = cfg.action_space()?;
        let mut env = Self {
            cfg,
            actions,
            state: EnvState {
                current: NetworkState::new(0.0, 0.0, 0.0, 0.0),
                active_bursts: Vec::new(),
                time_step: 0,
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn state(&self) -> NetworkState {
        self.state.current
    }

    pub fn env_state(&self) -> &EnvState {
        &self.state
    }

    pub fn time_step(&self) -> usize {
        self.state.time_step
    }

    /// Starts a new episode: SNR uniform over the cell's range and each
    /// source active with its stationary on-probability.
    pub fn reset(&mut self) -> NetworkState {
        let cell = &self.cfg.cell;
        let rng = &mut self.state.rng;
        let snr = rng.gen_range(cell.snr_floor_db..=cell.snr_ceil_db);
        let mut bursts = Vec::new();
        for (i, src) in self.cfg.traffic.sources.iter().enumerate() {
            let busy = src.burst_arrival_rate * src.mean_duration_s;
            let p_on = busy / (1.0 + busy);
            if rng.gen::<f64>() < p_on {
                bursts.push(Burst { source: i, rate_mbps: src.in_burst_rate_mbps, remaining_s: sample_duration(src, rng) });
            }
        }
        let full = prb_capacity(cell.n_prbs as i64, snr, cell).expect("n_prbs within range");
        self.state.current = NetworkState::new(snr, active_load(&bursts), full, 0.0);
        self.state.active_bursts = bursts;
        self.state.time_step = 0;
        self.state.current
    }

    /// Overrides the observable state and burst population; the RNG stream is kept.
    pub fn set_state(&mut self, current: NetworkState, bursts: Vec<Burst>) -> Result<()> {
        if !current.is_finite() || current.traffic_mbps < 0.0 || current.residual_mbps < 0.0 {
            return Err(Error::InvalidState(format!("{current:?}")));
        }
        self.state.current = current;
        self.state.active_bursts = bursts;
        Ok(())
    }

    /// Applies an allocation to the current state, scores it, and advances
    /// the channel and traffic to the next decision point.
    pub fn step(&mut self, action_prbs: u32) -> Result<StepOutcome> {
        if self.actions.index_of(action_prbs).is_none() {
            return Err(Error::InvalidAction(action_prbs));
        }
        let cell = &self.cfg.cell;
        let now = self.state.current;
        let served = prb_capacity(action_prbs as i64, now.snr_db, cell)?;
        let f = compute_objective(now.traffic_mbps, served, self.cfg.reward.lambda_w);
        let reward = compute_reward(f, &self.cfg.reward);
        let full = prb_capacity(cell.n_prbs as i64, now.snr_db, cell)?;

        let snr = simulate_snr(now.snr_db, cell, &mut self.state.rng);
        let traffic = generate_traffic(&self.cfg.traffic, &mut self.state.active_bursts, &mut self.state.rng);
        self.state.current = NetworkState::new(snr, traffic, (full - served).max(0.0), f);
        self.state.time_step += 1;
        Ok(StepOutcome {
            next_state: self.state.current,
            reward,
            f,
            done: self.state.time_step >= self.cfg.steps_per_episode,
            traffic_mbps: now.traffic_mbps,
            served_mbps: served,
        })
    }

    /// Index of the action minimising `|f|` for the current state.
    pub fn best_action_index(&self) -> usize {
        let now = self.state.current;
        let mut best = (0, f64::INFINITY);
        for (i, &a) in self.actions.actions().iter().enumerate() {
            let served = prb_capacity(a as i64, now.snr_db, &self.cfg.cell).expect("action within cell");
            let gap = compute_objective(now.traffic_mbps, served, self.cfg.reward.lambda_w).abs();
            if gap < best.1 {
                best = (i, gap);
            }
        }
        best.0
    }
}
