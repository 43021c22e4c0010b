use nsgrl_core::agent::*;
use nsgrl_core::env::{Env, EnvConfig};
use nsgrl_core::explainer::ExplainerConfig;
use nsgrl_core::graph::{complete_digraph, GraphState};
use nsgrl_core::nn::policy::NoRng;
use nsgrl_core::nn::{forward, ActivationConfig, Mode, ParamSet, PolicyArch, PolicyParameters};
use nsgrl_core::reasoner::{ExplanationShaper, Reasoner, ReasonerConfig, RuleBase};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_env(seed: u64) -> Env {
    Env::new(EnvConfig { steps_per_episode: 15, ..Default::default() }, seed).unwrap()
}

fn small_cfg(seed: u64, episodes: usize) -> TrainConfig {
    TrainConfig { episodes, seed, arch: PolicyArch { hidden_width: 16, gcn_layers: 2 }, ..Default::default() }
}

fn run(seed: u64, episodes: usize, shaper: Option<&mut dyn RewardShaper>, cfg: Option<TrainConfig>) -> TrainOutput {
    let cfg = cfg.unwrap_or_else(|| small_cfg(seed, episodes));
    let mut env = small_env(seed);
    let p = init_policy(&env, &cfg).unwrap();
    train(&mut env, p, shaper, &cfg, true, &mut NullProbe).unwrap()
}

struct Zero(usize);

impl RewardShaper for Zero {
    fn shaping_bonus(&mut self, _: &GraphState, _: &PolicyParameters, _: &ActivationConfig, _: usize, _: usize) -> nsgrl_core::Result<f64> {
        self.0 += 1;
        Ok(0.0)
    }
}

struct Constant(f64);

impl RewardShaper for Constant {
    fn shaping_bonus(&mut self, _: &GraphState, _: &PolicyParameters, _: &ActivationConfig, _: usize, _: usize) -> nsgrl_core::Result<f64> {
        Ok(self.0)
    }
}

#[test]
fn fixed_seed_reproduces_exactly() {
    let a = run(4, 2, None, None);
    let b = run(4, 2, None, None);
    assert_eq!(a.episodes, b.episodes);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.episodes.len(), 2);
    assert_eq!(a.steps.len(), 30);
}

#[test]
fn zero_shaper_matches_unshaped_run() {
    let base = run(5, 3, None, None);
    let mut z = Zero(0);
    let shaped = run(5, 3, Some(&mut z), None);
    assert_eq!(z.0, 3);
    assert_eq!(base.episodes, shaped.episodes);
    assert_eq!(base.policy, shaped.policy);
}

#[test]
fn empty_rule_base_matches_unshaped_run() {
    let base = run(6, 3, None, None);
    let reasoner = Reasoner::new(ReasonerConfig::default(), RuleBase::new()).unwrap();
    let mut shaper = ExplanationShaper::new(ExplainerConfig::default(), reasoner, 6);
    let shaped = run(6, 3, Some(&mut shaper), None);
    assert_eq!(base.episodes, shaped.episodes);
    assert_eq!(base.steps, shaped.steps);
    assert_eq!(base.policy, shaped.policy);
}

#[test]
fn period_beyond_episode_length_never_shapes() {
    let cfg = TrainConfig { shaping_period: 16, ..small_cfg(7, 3) };
    let base = run(7, 3, None, Some(cfg.clone()));
    let mut c = Constant(5.0);
    let shaped = run(7, 3, Some(&mut c), Some(cfg));
    assert_eq!(base.episodes, shaped.episodes);
    assert_eq!(base.steps, shaped.steps);
    assert_eq!(base.policy, shaped.policy);
}

#[test]
fn shaping_applies_only_at_period_steps() {
    let mut c = Constant(2.5);
    let out = run(8, 2, Some(&mut c), None);
    for s in &out.steps {
        let expect = if (s.step + 1) % 10 == 0 { 2.5 } else { 0.0 };
        assert_eq!(s.r_star, expect);
    }
    let per_episode = out.episodes.iter().map(|e| e.mean_shaped_bonus).collect::<Vec<_>>();
    assert!(per_episode.iter().all(|b| (b - 2.5 / 15.0).abs() < 1e-12));
}

#[test]
fn greedy_evaluation_is_repeatable_and_consumes_no_randomness() {
    let out = run(9, 2, None, None);
    let a = evaluate(&out.policy, &mut small_env(50), 3, 0.0, 1).unwrap();
    let b = evaluate(&out.policy, &mut small_env(50), 3, 0.0, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 45);
    assert!(evaluate(&out.policy, &mut small_env(50), 1, -1.0, 0).is_err());
    let noisy = evaluate(&out.policy, &mut small_env(50), 3, 10.0, 3).unwrap();
    assert!(noisy.iter().all(|s| s.f.is_finite()));
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let out = run(10, 2, None, None);
    let json = serde_json::to_string(&out.policy).unwrap();
    let back: GnnPolicy = serde_json::from_str(&json).unwrap();
    assert_eq!(back, out.policy);
    assert_eq!(back.params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), out.policy.params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn invalid_config_rejected() {
    let cfg = TrainConfig { shaping_period: 0, ..small_cfg(0, 1) };
    let mut env = small_env(0);
    let p = init_policy(&env, &small_cfg(0, 1)).unwrap();
    assert!(train(&mut env, p, None, &cfg, false, &mut NullProbe).is_err());
}

fn uniform_trace(n_actions: usize) -> (GraphState, nsgrl_core::nn::ForwardTrace) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = PolicyParameters::init(2, PolicyArch { hidden_width: 4, gcn_layers: 1 }, n_actions, &mut rng).unwrap();
    params.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
    let g = GraphState::new(ndarray::Array2::zeros((4, 2)), complete_digraph(4)).unwrap();
    let (_, trace) = forward(&g, &params, &ActivationConfig::default(), Mode::Eval, &mut NoRng).unwrap();
    (g, trace)
}

fn traj_of(n_steps: usize, n_actions: usize) -> Trajectory {
    let (g, trace) = uniform_trace(n_actions);
    Trajectory {
        steps: (0..n_steps)
            .map(|t| StepRecord {
                graph: g.clone(),
                action: t % n_actions,
                log_prob: trace.log_probs[0],
                entropy: (n_actions as f64).ln(),
                base_reward: 0.0,
                shaped_reward: 0.0,
                trace: trace.clone(),
            })
            .collect(),
    }
}

#[test]
fn policy_loss_examples() {
    let traj = traj_of(3, 5);
    let stats = normalize_advantage(&[1.0, 1.0, 1.0]);
    let (loss, up) = policy_loss(&traj, &stats, 0.0).unwrap();
    assert_eq!(loss, 0.0);
    assert!(up.iter().all(|d| d.iter().all(|v| *v == 0.0)));

    let mut single = traj_of(1, 2);
    single.steps[0].trace.log_probs = ndarray::array![-0.5, (1.0 - (-0.5f64).exp()).ln()];
    single.steps[0].action = 0;
    let stats = TrajectoryStats { returns: vec![1.0], mean: 0.0, std: 1.0, normalized: vec![1.0] };
    assert!((policy_loss(&single, &stats, 0.0).unwrap().0 - 0.5).abs() < 1e-15);

    let stats = normalize_advantage(&[0.0, 0.0, 0.0, 0.0]);
    let (loss, _) = policy_loss(&traj_of(4, 5), &stats, 0.1).unwrap();
    assert!((loss + 0.1 * 4.0 * 5f64.ln()).abs() < 1e-12);

    assert!(policy_loss(&traj_of(2, 5), &normalize_advantage(&[1.0]), 0.0).is_err());
}

proptest! {
    #[test]
    fn advantages_are_standardized(g in prop::collection::vec(-100.0f64..100.0, 2..50)) {
        let s = normalize_advantage(&g);
        let n = g.len() as f64;
        let mean = s.normalized.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        if s.std > 1e-6 {
            let var = s.normalized.iter().map(|v| v * v).sum::<f64>() / n;
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_shift_leaves_advantages_unchanged(g in prop::collection::vec(-10.0f64..10.0, 2..40), c in -50.0f64..50.0) {
        let a = normalize_advantage(&g);
        let shifted: Vec<f64> = g.iter().map(|v| v + c).collect();
        let b = normalize_advantage(&shifted);
        for (x, y) in a.normalized.iter().zip(&b.normalized) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn returns_follow_recursion(r in prop::collection::vec(-5.0f64..5.0, 1..30), gamma in 0.0f64..1.0) {
        let g = discounted_returns(&r, gamma);
        let last = r.len() - 1;
        prop_assert_eq!(g[last], r[last]);
        for t in 0..last {
            prop_assert!((g[t] - (r[t] + gamma * g[t + 1])).abs() < 1e-9);
        }
    }
}
