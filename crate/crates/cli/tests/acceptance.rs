//! One test per acceptance criterion; each prints a single PASS/FAIL line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use nsgrl_cli::checkpoint::{Checkpoint, Model};
use nsgrl_cli::config::{AgentKind, ExperimentConfig};
use nsgrl_cli::metrics::median;
use nsgrl_cli::runner::{self, BenchReport};
use nsgrl_core::agent::{init_policy, train, NullProbe, TrainConfig};
use nsgrl_core::baselines::{q_regression_loss, reinforce_loss};
use nsgrl_core::env::{build_action_space, compute_reward, BaseMode, Env, EnvConfig, RewardConfig};
use nsgrl_core::explainer::{cavi_fit, ExplainerConfig};
use nsgrl_core::graph::{complete_digraph, encode_frozen, GraphState};
use nsgrl_core::nn::ops::{gcn_layer, gcn_layer_backward, layer_norm, layer_norm_backward, log_softmax, log_softmax_backward, normalized_adjacency};
use nsgrl_core::nn::policy::NoRng;
use nsgrl_core::nn::{backward, finite_diff_check, forward, forward_eval, ActivationConfig, Mlp, Mode, ParamSet, PolicyArch, PolicyParameters, QNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

#[derive(Clone)]
struct Blocks(Vec<Array2<f64>>);

impl ParamSet for Blocks {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.0.iter().collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.0.iter_mut().collect()
    }
    fn tensor_names(&self) -> Vec<String> {
        (0..self.0.len()).map(|i| format!("b{i}")).collect()
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn jittered_params(rng: &mut ChaCha8Rng, n_nodes_features: usize, n_actions: usize) -> PolicyParameters {
    let mut p = PolicyParameters::init(n_nodes_features, PolicyArch { hidden_width: 6, gcn_layers: 2 }, n_actions, rng).unwrap();
    for t in p.tensors_mut() {
        t.mapv_inplace(|v| v + 0.1 * rng.gen_range(-1.0..1.0));
    }
    p
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let (eps, tol) = (1e-5, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut errs: BTreeMap<&str, f64> = BTreeMap::new();

    let r = rand_mat(&mut rng, 3, 5);
    let b = Blocks(vec![rand_mat(&mut rng, 3, 5), rand_mat(&mut rng, 1, 5), rand_mat(&mut rng, 1, 5)]);
    errs.insert(
        "layer_norm",
        finite_diff_check(
            |b: &Blocks| {
                let (out, cache) = layer_norm(&b.0[0], b.0[1].row(0), b.0[2].row(0));
                let (dx, dg, db) = layer_norm_backward(&r, &cache, b.0[1].row(0));
                ((&out * &r).sum(), Blocks(vec![dx, dg.insert_axis(Axis(0)), db.insert_axis(Axis(0))]))
            },
            &b,
            eps,
            None,
        ),
    );

    let r = rand_mat(&mut rng, 4, 6);
    let adj = normalized_adjacency(&complete_digraph(4), 4).unwrap();
    let b = Blocks(vec![rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 3, 6), rand_mat(&mut rng, 1, 6), rand_mat(&mut rng, 1, 6), adj]);
    errs.insert(
        "gcn_layer",
        finite_diff_check(
            |b: &Blocks| {
                let (out, cache) = gcn_layer(&b.0[0], &b.0[4], &b.0[1], b.0[2].row(0), b.0[3].row(0)).unwrap();
                let g = gcn_layer_backward(&r, &cache, &b.0[4], &b.0[1], b.0[2].row(0));
                ((&out * &r).sum(), Blocks(vec![g.d_input, g.d_weight, g.d_gain.insert_axis(Axis(0)), g.d_bias.insert_axis(Axis(0)), g.d_adj]))
            },
            &b,
            eps,
            None,
        ),
    );

    let w = Array1::from_vec(rand_vec(&mut rng, 7, 1.0));
    let b = Blocks(vec![rand_mat(&mut rng, 1, 7) * 3.0]);
    errs.insert(
        "log_softmax",
        finite_diff_check(
            |b: &Blocks| {
                let lp = log_softmax(b.0[0].row(0));
                let d = log_softmax_backward(w.view(), lp.view());
                (lp.dot(&w), Blocks(vec![d.insert_axis(Axis(0))]))
            },
            &b,
            eps,
            None,
        ),
    );

    let act = ActivationConfig { alpha_dropout_p: 0.0, ..Default::default() };
    let params = jittered_params(&mut rng, 2, 5);
    let g = GraphState::new(rand_mat(&mut rng, 4, 2), complete_digraph(4)).unwrap();
    let w = Array1::from_vec(rand_vec(&mut rng, 5, 1.0));
    errs.insert(
        "gnn_policy",
        finite_diff_check(
            |p: &PolicyParameters| {
                let (lp, tr) = forward(&g, p, &act, Mode::Eval, &mut NoRng).unwrap();
                (lp.dot(&w), backward(&tr, p, &act, w.view()).unwrap().params)
            },
            &params,
            eps,
            None,
        ),
    );

    let x = rand_mat(&mut rng, 6, 4);
    let actions: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
    let ys = rand_vec(&mut rng, 6, 2.0);
    let plain = QNetwork::plain(4, 8, 5, &mut rng).unwrap();
    errs.insert("q_plain", finite_diff_check(|n: &QNetwork| q_regression_loss(n, &x, &actions, &ys).unwrap(), &plain, eps, None));
    let dueling = QNetwork::dueling(4, 8, 5, &mut rng).unwrap();
    errs.insert("q_dueling", finite_diff_check(|n: &QNetwork| q_regression_loss(n, &x, &actions, &ys).unwrap(), &dueling, eps, None));
    let mlp = Mlp::init(&[4, 8, 8, 5], &mut rng).unwrap();
    errs.insert("mlp_policy", finite_diff_check(|n: &Mlp| reinforce_loss(n, &x, &actions, &ys).unwrap(), &mlp, eps, None));

    let elapsed = start.elapsed();
    let worst = errs.values().cloned().fold(0.0, f64::max);
    let pass = worst < tol && elapsed < Duration::from_secs(60);
    report(1, "gradient correctness", pass, format!("max rel err {worst:.2e} over {errs:?}, {:.2}s", elapsed.as_secs_f64()));
}

#[test]
fn criterion_02_elbo_monotonicity() {
    let start = Instant::now();
    let mut instances = 0;
    let mut worst_drop = 0.0f64;
    for seed in 0..4u64 {
        let env_cfg = EnvConfig { steps_per_episode: 20, ..Default::default() };
        let mut env = Env::new(env_cfg.clone(), seed).unwrap();
        let cfg = TrainConfig { episodes: 8, seed, arch: PolicyArch { hidden_width: 16, gcn_layers: 2 }, ..Default::default() };
        let p = init_policy(&env, &cfg).unwrap();
        let out = train(&mut env, p, None, &cfg, false, &mut NullProbe).unwrap();
        let mut probe = Env::new(env_cfg, seed + 100).unwrap();
        let mut state = probe.reset();
        for k in 0..6 {
            let g = encode_frozen(&state, &out.policy.scaler).unwrap();
            let (q, _) = cavi_fit(&out.policy.params, &out.policy.activation, &g, &ExplainerConfig::default(), seed * 100 + k).unwrap();
            for w in q.elbo_trace.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
            }
            instances += 1;
            let n = probe.action_space().len();
            state = probe.step(probe.action_space().prbs((5 * k as usize) % n).unwrap()).unwrap().next_state;
        }
    }
    let elapsed = start.elapsed();
    let pass = instances >= 20 && worst_drop <= 1e-8 && elapsed < Duration::from_secs(60);
    report(2, "ELBO monotonicity", pass, format!("{instances} instances, largest decrease {worst_drop:.2e}, {:.2}s", elapsed.as_secs_f64()));
}

/// Plain nested loops over an explicit adjacency with self loops.
fn dense_forward(g: &GraphState, p: &PolicyParameters, act: &ActivationConfig) -> Vec<f64> {
    let n = g.n_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(s, d) in &g.edge_index {
        a[d][s] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| g.node_features.row(i).to_vec()).collect();
    for l in 0..p.gcn_weights.len() {
        let w = &p.gcn_weights[l];
        let width = w.ncols();
        let z: Vec<Vec<f64>> = h
            .iter()
            .map(|hi| {
                let raw: Vec<f64> = (0..width).map(|c| hi.iter().enumerate().map(|(k, v)| v * w[[k, c]]).sum()).collect();
                let m = raw.iter().sum::<f64>() / width as f64;
                let var = raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / width as f64;
                (0..width).map(|c| (raw[c] - m) / (var + 1e-5).sqrt() * p.ln_gains[l][[0, c]] + p.ln_biases[l][[0, c]]).collect()
            })
            .collect();
        h = (0..n)
            .map(|i| (0..width).map(|c| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt() * z[j][c]).sum::<f64>().max(0.0)).collect())
            .collect();
    }
    let width = h[0].len();
    let pooled: Vec<f64> = (0..width).map(|c| h.iter().map(|r| r[c]).sum()).collect();
    let hidden: Vec<f64> = (0..p.head1_w.ncols())
        .map(|j| {
            let x = (0..width).map(|k| pooled[k] * p.head1_w[[k, j]]).sum::<f64>() + p.head1_b[[0, j]];
            act.selu_lambda * if x > 0.0 { x } else { act.selu_alpha * (x.exp() - 1.0) }
        })
        .collect();
    let logits: Vec<f64> = (0..p.head2_w.ncols()).map(|j| (0..hidden.len()).map(|k| hidden[k] * p.head2_w[[k, j]]).sum::<f64>() + p.head2_b[[0, j]]).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

#[test]
fn criterion_03_gcn_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let act = ActivationConfig::default();
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = 1 + trial % 5;
        let edges: Vec<(usize, usize)> = complete_digraph(n).into_iter().filter(|_| rng.gen_bool(0.6)).collect();
        let g = GraphState::new(rand_mat(&mut rng, n, 2), edges).unwrap();
        let params = jittered_params(&mut rng, 2, 1 + trial % 7);
        let got = forward_eval(&g, &params, &act).unwrap();
        for (a, b) in got.iter().zip(dense_forward(&g, &params, &act)) {
            worst = worst.max((a - b).abs());
        }
    }
    let adj = normalized_adjacency(&complete_digraph(4), 4).unwrap();
    let k4 = adj.iter().all(|&v| (v - 0.25).abs() < 1e-15);
    report(3, "GCN oracle equivalence", worst < 1e-10 && k4, format!("max |diff| {worst:.2e} on 100 graphs, K4 adjacency constant 0.25: {k4}"));
}

#[test]
fn criterion_04_action_space_ratio() {
    let a2 = build_action_space(2, 52).unwrap().len();
    let a5 = build_action_space(5, 52).unwrap().len();
    let ratio = a2 as f64 / a5 as f64;
    report(4, "action-space ratio", a2 == 26 && a5 == 10 && ratio == 2.6, format!("|A(2)|={a2}, |A(5)|={a5}, ratio {ratio}"));
}

fn bench_dir() -> PathBuf {
    std::env::temp_dir().join(format!("nsgrl-acceptance-{}", std::process::id()))
}

struct BenchRun {
    report: BenchReport,
    checkpoints: Vec<Checkpoint>,
    cfg: ExperimentConfig,
    elapsed: Duration,
}

/// Full six-agent bench at the default configuration, shared by criteria 5 to 7.
fn bench() -> &'static BenchRun {
    static RUN: OnceLock<BenchRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let start = Instant::now();
        let out = runner::cmd_bench(&cfg, &AgentKind::ALL, &bench_dir().join("bench")).unwrap();
        BenchRun { report: out.report, checkpoints: out.checkpoints, cfg, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_05_convergence_ordering() {
    let b = bench();
    let tango = b.report.summary(AgentKind::Tango).unwrap();
    let base = b.report.summary(AgentKind::GnnReinforce).unwrap();
    let seeds = b.cfg.run.seeds.len();
    let pass = seeds >= 5
        && b.cfg.run.episodes == 70
        && tango.median_final_reward >= base.median_final_reward
        && tango.median_episodes_to_threshold <= base.median_episodes_to_threshold
        && b.elapsed < Duration::from_secs(15 * 60);
    report(
        5,
        "convergence ordering",
        pass,
        format!(
            "{seeds} seeds; last-10 reward tango {:.2} vs baseline {:.2}; episodes to 90% tango {} vs baseline {}; bench {:.0}s",
            tango.median_final_reward,
            base.median_final_reward,
            tango.median_episodes_to_threshold,
            base.median_episodes_to_threshold,
            b.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_inference_accuracy() {
    let b = bench();
    let tango = b.report.summary(AgentKind::Tango).unwrap();
    let base = b.report.summary(AgentKind::GnnReinforce).unwrap();
    let pass = b.cfg.run.eval_trials == 40 && tango.median_accuracy >= 0.90 && tango.median_accuracy >= base.median_accuracy;
    report(
        6,
        "inference accuracy",
        pass,
        format!("median in-band accuracy over 40 trials at sigma 0: tango {:.4} (target >= 0.90), baseline {:.4}", tango.median_accuracy, base.median_accuracy),
    );
}

#[test]
fn criterion_07_robustness() {
    let b = bench();
    let mut at_zero = Vec::new();
    let mut at_ten = Vec::new();
    let mut all_finite = true;
    for ck in b.checkpoints.iter().filter(|c| c.agent == AgentKind::Tango) {
        let r = runner::robustness_sweep(&b.cfg, ck, ck.seed, b.cfg.run.eval_trials).unwrap();
        all_finite &= r.rows.len() == 11 && r.rows.iter().all(|row| row.in_band_accuracy.is_finite());
        at_zero.push(r.rows.iter().find(|row| row.noise_sigma == 0.0).unwrap().in_band_accuracy);
        at_ten.push(r.rows.iter().find(|row| row.noise_sigma == 10.0).unwrap().in_band_accuracy);
    }
    let degradation: Vec<f64> = at_zero.iter().zip(&at_ten).map(|(a, b)| a - b).collect();
    let (m0, m10, md) = (median(&at_zero), median(&at_ten), median(&degradation));
    let pass = all_finite && m10 <= m0 && md <= 0.30;
    report(7, "robustness", pass, format!("median accuracy sigma=0 {m0:.4}, sigma=10 {m10:.4}, median degradation {:.1} points", 100.0 * md));
}

fn reward_oracle(f: f64, mode: BaseMode) -> f64 {
    let base = if mode == BaseMode::Literal { f } else { -f.abs() };
    if !(-2.0..=2.0).contains(&f) {
        base - 5.0
    } else {
        base + 1.0
    }
}

#[test]
fn criterion_08_reward_branches() {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    let grid: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 0.005).chain([-2.0, 2.0, -2.0 - 1e-12, 2.0 + 1e-12, -1e6, 1e6]).collect();
    for mode in [BaseMode::Literal, BaseMode::Magnitude] {
        let cfg = RewardConfig { base_mode: mode, ..Default::default() };
        for &f in &grid {
            let got = compute_reward(f, &cfg);
            let want = reward_oracle(f, mode);
            if got != want {
                mismatches.push((f, got, want));
            }
            checked += 1;
        }
    }
    let edges_in_band = [-2.0, 2.0].iter().all(|&f| RewardConfig::default().in_band(f));
    let literal = RewardConfig { base_mode: BaseMode::Literal, ..Default::default() };
    let examples = compute_reward(-2.0, &literal) == -1.0 && compute_reward(2.0, &literal) == 3.0 && compute_reward(3.0, &literal) == -2.0;
    let pass = mismatches.is_empty() && edges_in_band && examples;
    report(8, "reward branches", pass, format!("{checked} grid points in both modes, {} mismatches, boundaries in band: {edges_in_band}", mismatches.len()));
}

#[test]
fn criterion_09_shaping_identity() {
    let mut cfg = ExperimentConfig::default();
    cfg.run.episodes = 3;
    cfg.env.steps_per_episode = 30;
    cfg.reasoner.rules = Some(Vec::new());
    let tango = runner::train_agent(&cfg, &cfg.env, AgentKind::Tango, 11, true).unwrap();
    let plain = runner::train_agent(&cfg, &cfg.env, AgentKind::GnnReinforce, 11, true).unwrap();
    let pass = tango.episodes == plain.episodes && tango.steps == plain.steps && tango.checkpoint.model == plain.checkpoint.model;
    report(9, "shaping identity", pass, format!("empty rule base vs unshaped run, {} episodes, {} steps compared", tango.episodes.len(), tango.steps.len()));
}

fn group_ok(values: &[f64]) -> (bool, bool) {
    let in_range = values.iter().all(|v| (0.0..=1.0).contains(v));
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = values.iter().all(|&v| v == values[0]);
    (in_range, degenerate || (lo == 0.0 && hi == 1.0))
}

#[test]
fn criterion_10_explanation_format() {
    let dir = bench_dir().join("explain");
    let mut cfg = ExperimentConfig::default();
    cfg.run.episodes = 3;
    cfg.env.steps_per_episode = 30;
    let run = runner::train_agent(&cfg, &cfg.env, AgentKind::Tango, 2, false).unwrap();
    let ck_path = dir.join("tango_checkpoint.json");
    std::fs::create_dir_all(&dir).unwrap();
    run.checkpoint.save(&ck_path).unwrap();
    assert!(matches!(run.checkpoint.model, Model::Gnn(_)));

    let mut docs = 0;
    let mut failures = Vec::new();
    for seed in 0..8u64 {
        let out = dir.join(format!("s{seed}"));
        runner::cmd_explain(&cfg, &ck_path, Some(seed), None, &out).unwrap();
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("explanation.json")).unwrap()).unwrap();
        let nodes = json["explanation"]["nodes"].as_array().unwrap();
        let edges = json["explanation"]["edges"].as_array().unwrap();
        let feats: Vec<f64> = nodes.iter().flat_map(|n| n["feature_importance"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap())).collect();
        let edge_imp: Vec<f64> = edges.iter().map(|e| e["importance"].as_f64().unwrap()).collect();
        let (fr, fx) = group_ok(&feats);
        let (er, ex) = group_ok(&edge_imp);
        if !(nodes.len() == 4 && edges.len() == 12 && fr && fx && er && ex) {
            failures.push(seed);
        }
        docs += 1;
    }
    report(10, "explanation format", failures.is_empty(), format!("{docs} documents with 4 nodes, 12 edges and exact 0/1 extremes; failing seeds {failures:?}"));
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_11_determinism() {
    let root = bench_dir().join("replay");
    let mut cfg = ExperimentConfig::default();
    cfg.run.episodes = 2;
    cfg.run.seeds = vec![0, 1];
    cfg.run.eval_trials = 2;
    cfg.run.noise_sigmas = vec![0.0, 5.0];
    cfg.env.steps_per_episode = 20;

    let train_dir = root.join("train");
    runner::cmd_train(&cfg, AgentKind::Tango, true, &train_dir).unwrap();
    let ck = train_dir.join("tango_seed0_checkpoint.json");
    runner::cmd_eval(&cfg, &ck, None, 2.0, 2, &root.join("eval")).unwrap();
    runner::cmd_robustness(&cfg, &ck, None, 2, &root.join("robustness")).unwrap();
    runner::cmd_explain(&cfg, &ck, None, None, &root.join("explain")).unwrap();
    runner::cmd_scalability(&cfg, &root.join("scalability")).unwrap();
    runner::cmd_bench(&cfg, &AgentKind::ALL, &root.join("bench")).unwrap();

    let mut compared = 0;
    let mut differing = Vec::new();
    for cmd in ["train", "eval", "robustness", "explain", "scalability", "bench"] {
        let first = root.join(cmd);
        let again = root.join(format!("{cmd}_replay"));
        runner::replay(&first.join("manifest.json"), &again).unwrap();
        let (a, b) = (files(&first), files(&again));
        if a.keys().ne(b.keys()) {
            differing.push(format!("{cmd}: file sets differ"));
        }
        for (name, bytes) in &a {
            compared += 1;
            if b.get(name) != Some(bytes) {
                differing.push(format!("{cmd}/{}", name.display()));
            }
        }
    }
    report(11, "determinism", differing.is_empty() && compared > 0, format!("{compared} files replayed from manifests; differing {differing:?}"));
}
