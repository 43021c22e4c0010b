use ndarray::{Array1, Array2};
use nsgrl_core::agent::{normalize_advantage, policy_loss, StepRecord, Trajectory};
use nsgrl_core::graph::{complete_digraph, GraphState};
use nsgrl_core::nn::ops::{gcn_layer, gcn_layer_backward, layer_norm, layer_norm_backward, log_softmax, log_softmax_backward, normalized_adjacency};
use nsgrl_core::nn::policy::NoRng;
use nsgrl_core::nn::{backward, finite_diff_check, forward, forward_eval, ActivationConfig, Mode, ParamSet, PolicyArch, PolicyParameters};
use nsgrl_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Loose tensors so single kernels can be checked w.r.t. inputs and weights alike.
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

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> GraphState {
    GraphState::new(rand_mat(rng, n, 2), complete_digraph(n)).unwrap()
}

fn sparse_graph(rng: &mut ChaCha8Rng, n: usize) -> GraphState {
    let edges: Vec<(usize, usize)> = complete_digraph(n).into_iter().filter(|_| rng.gen_bool(0.6)).collect();
    GraphState::new(rand_mat(rng, n, 2), edges).unwrap()
}

fn small_params(rng: &mut ChaCha8Rng, n_actions: usize) -> PolicyParameters {
    let mut p = PolicyParameters::init(2, PolicyArch { hidden_width: 6, gcn_layers: 2 }, n_actions, rng).unwrap();
    for t in p.tensors_mut() {
        t.mapv_inplace(|v| v + 0.1 * rng.gen_range(-1.0..1.0));
    }
    p
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = rand_mat(&mut rng, 3, 5);
    let blocks = Blocks(vec![rand_mat(&mut rng, 3, 5), rand_mat(&mut rng, 1, 5), rand_mat(&mut rng, 1, 5)]);
    let err = finite_diff_check(
        |b: &Blocks| {
            let (out, cache) = layer_norm(&b.0[0], b.0[1].row(0), b.0[2].row(0));
            let (dx, dg, db) = layer_norm_backward(&r, &cache, b.0[1].row(0));
            ((&out * &r).sum(), Blocks(vec![dx, dg.insert_axis(ndarray::Axis(0)), db.insert_axis(ndarray::Axis(0))]))
        },
        &blocks,
        EPS,
        None,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn gcn_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r = rand_mat(&mut rng, 4, 6);
    let adj = normalized_adjacency(&complete_digraph(4), 4).unwrap();
    let blocks = Blocks(vec![rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 3, 6), rand_mat(&mut rng, 1, 6), rand_mat(&mut rng, 1, 6), adj]);
    let err = finite_diff_check(
        |b: &Blocks| {
            let (out, cache) = gcn_layer(&b.0[0], &b.0[4], &b.0[1], b.0[2].row(0), b.0[3].row(0)).unwrap();
            let g = gcn_layer_backward(&r, &cache, &b.0[4], &b.0[1], b.0[2].row(0));
            (
                (&out * &r).sum(),
                Blocks(vec![
                    g.d_input,
                    g.d_weight,
                    g.d_gain.insert_axis(ndarray::Axis(0)),
                    g.d_bias.insert_axis(ndarray::Axis(0)),
                    g.d_adj,
                ]),
            )
        },
        &blocks,
        EPS,
        None,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn log_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Array1::from_vec((0..7).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let blocks = Blocks(vec![rand_mat(&mut rng, 1, 7) * 3.0]);
    let err = finite_diff_check(
        |b: &Blocks| {
            let lp = log_softmax(b.0[0].row(0));
            let d = log_softmax_backward(w.view(), lp.view());
            (lp.dot(&w), Blocks(vec![d.insert_axis(ndarray::Axis(0))]))
        },
        &blocks,
        EPS,
        None,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn composed_policy_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let act = ActivationConfig { alpha_dropout_p: 0.0, ..Default::default() };
    let params = small_params(&mut rng, 5);
    let g = random_graph(&mut rng, 4);
    let w = Array1::from_vec((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let err = finite_diff_check(
        |p: &PolicyParameters| {
            let (lp, tr) = forward(&g, p, &act, Mode::Eval, &mut NoRng).unwrap();
            (lp.dot(&w), backward(&tr, p, &act, w.view()).unwrap().params)
        },
        &params,
        EPS,
        None,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn composed_policy_with_fixed_dropout_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let act = ActivationConfig { alpha_dropout_p: 0.3, ..Default::default() };
    let params = small_params(&mut rng, 4);
    let g = random_graph(&mut rng, 4);
    let w = Array1::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (_, probe) = forward(&g, &params, &act, Mode::Train, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    assert!(probe.dropout.keep.iter().any(|k| !k), "mask should drop at least one unit");
    let err = finite_diff_check(
        |p: &PolicyParameters| {
            let (lp, tr) = forward(&g, p, &act, Mode::Train, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
            (lp.dot(&w), backward(&tr, p, &act, w.view()).unwrap().params)
        },
        &params,
        EPS,
        None,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn input_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let act = ActivationConfig { alpha_dropout_p: 0.0, ..Default::default() };
    let params = small_params(&mut rng, 3);
    let g = random_graph(&mut rng, 4);
    let adj = normalized_adjacency(&g.edge_index, 4).unwrap();
    let w = Array1::from_vec(vec![0.3, -1.0, 0.5]);
    let blocks = Blocks(vec![g.node_features.clone(), adj]);
    let err = finite_diff_check(
        |b: &Blocks| {
            let (lp, tr) = nsgrl_core::nn::forward_dense(&b.0[0], &b.0[1], &params, &act, Mode::Eval, &mut NoRng).unwrap();
            let gr = backward(&tr, &params, &act, w.view()).unwrap();
            (lp.dot(&w), Blocks(vec![gr.d_features, gr.d_adjacency]))
        },
        &blocks,
        EPS,
        None,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn assembled_reinforce_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let act = ActivationConfig { alpha_dropout_p: 0.0, ..Default::default() };
    let params = small_params(&mut rng, 4);
    let graphs: Vec<GraphState> = (0..5).map(|_| random_graph(&mut rng, 4)).collect();
    let actions: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
    let rewards: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..1.0)).collect();
    let stats = normalize_advantage(&nsgrl_core::agent::discounted_returns(&rewards, 0.9));
    let lambda = 0.01;
    let err = finite_diff_check(
        |p: &PolicyParameters| {
            let mut traj = Trajectory::default();
            for (g, &a) in graphs.iter().zip(&actions) {
                let (lp, trace) = forward(g, p, &act, Mode::Eval, &mut NoRng).unwrap();
                traj.steps.push(StepRecord {
                    graph: g.clone(),
                    action: a,
                    log_prob: lp[a],
                    entropy: 0.0,
                    base_reward: 0.0,
                    shaped_reward: 0.0,
                    trace,
                });
            }
            let (loss, upstream) = policy_loss(&traj, &stats, lambda).unwrap();
            let mut grad = p.zeros_like();
            for (step, d) in traj.steps.iter().zip(&upstream) {
                grad.add_scaled(&backward(&step.trace, p, &act, d.view()).unwrap().params, 1.0);
            }
            (loss, grad)
        },
        &params,
        EPS,
        None,
    );
    assert!(err < TOL, "{err}");
}

/// Plain-loop recomputation of the policy forward pass.
fn dense_oracle(g: &GraphState, p: &PolicyParameters, act: &ActivationConfig) -> Vec<f64> {
    let n = g.n_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for &(s, d) in &g.edge_index {
        if s != d {
            a[d][s] = 1.0;
        }
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| g.node_features.row(i).to_vec()).collect();
    for l in 0..p.gcn_weights.len() {
        let w = &p.gcn_weights[l];
        let width = w.ncols();
        let mut z = vec![vec![0.0; width]; n];
        for i in 0..n {
            for c in 0..width {
                for (k, hv) in h[i].iter().enumerate() {
                    z[i][c] += hv * w[[k, c]];
                }
            }
            let mean = z[i].iter().sum::<f64>() / width as f64;
            let var = z[i].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            for c in 0..width {
                z[i][c] = (z[i][c] - mean) / (var + 1e-5).sqrt() * p.ln_gains[l][[0, c]] + p.ln_biases[l][[0, c]];
            }
        }
        let mut next = vec![vec![0.0; width]; n];
        for i in 0..n {
            for j in 0..n {
                let coef = a[i][j] / (deg[i] * deg[j]).sqrt();
                for c in 0..width {
                    next[i][c] += coef * z[j][c];
                }
            }
            for v in next[i].iter_mut() {
                *v = v.max(0.0);
            }
        }
        h = next;
    }
    let width = h[0].len();
    let pooled: Vec<f64> = (0..width).map(|c| h.iter().map(|r| r[c]).sum()).collect();
    let hidden: Vec<f64> = (0..p.head1_w.ncols())
        .map(|j| {
            let x = (0..width).map(|k| pooled[k] * p.head1_w[[k, j]]).sum::<f64>() + p.head1_b[[0, j]];
            if x > 0.0 {
                act.selu_lambda * x
            } else {
                act.selu_lambda * act.selu_alpha * (x.exp() - 1.0)
            }
        })
        .collect();
    let logits: Vec<f64> = (0..p.head2_w.ncols())
        .map(|j| (0..hidden.len()).map(|k| hidden[k] * p.head2_w[[k, j]]).sum::<f64>() + p.head2_b[[0, j]])
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits.iter().map(|l| l - m - z.ln()).collect()
}

#[test]
fn forward_matches_dense_oracle_on_random_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let act = ActivationConfig::default();
    for trial in 0..60 {
        let n = 1 + trial % 5;
        let g = sparse_graph(&mut rng, n);
        let params = small_params(&mut rng, 1 + trial % 6);
        let got = forward_eval(&g, &params, &act).unwrap();
        let want = dense_oracle(&g, &params, &act);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn k4_normalized_adjacency_is_constant_quarter() {
    let adj = normalized_adjacency(&complete_digraph(4), 4).unwrap();
    assert!(adj.iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn zero_parameters_give_uniform_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = PolicyParameters::init(2, PolicyArch::default(), 26, &mut rng).unwrap();
    params.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
    let lp = forward_eval(&random_graph(&mut rng, 4), &params, &ActivationConfig::default()).unwrap();
    for v in lp.iter() {
        assert!((v + 26f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn node_permutation_leaves_output_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let act = ActivationConfig::default();
    for _ in 0..20 {
        let g = sparse_graph(&mut rng, 4);
        let params = small_params(&mut rng, 5);
        let perm = [2usize, 0, 3, 1];
        let mut feats = Array2::zeros((4, 2));
        for i in 0..4 {
            feats.row_mut(perm[i]).assign(&g.node_features.row(i));
        }
        let edges = g.edge_index.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let h = GraphState::new(feats, edges).unwrap();
        let a = forward_eval(&g, &params, &act).unwrap();
        let b = forward_eval(&h, &params, &act).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn eval_mode_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = small_params(&mut rng, 5);
    let g = random_graph(&mut rng, 4);
    let act = ActivationConfig::default();
    let a = forward_eval(&g, &params, &act).unwrap();
    let b = forward_eval(&g, &params, &act).unwrap();
    assert_eq!(a, b);
}

#[test]
fn backward_rejects_stale_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = small_params(&mut rng, 5);
    let g = random_graph(&mut rng, 4);
    let act = ActivationConfig::default();
    let (lp, trace) = forward(&g, &params, &act, Mode::Eval, &mut NoRng).unwrap();
    params.head2_b[[0, 0]] += 1.0;
    let err = backward(&trace, &params, &act, lp.view()).unwrap_err();
    assert!(matches!(err, Error::InvalidTrace(_)));
    let other = small_params(&mut rng, 3);
    assert!(matches!(backward(&trace, &other, &act, lp.view()), Err(Error::InvalidTrace(_))));
}

#[test]
fn feature_width_mismatch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = small_params(&mut rng, 5);
    let g = GraphState::new(rand_mat(&mut rng, 4, 3), complete_digraph(4)).unwrap();
    assert!(forward_eval(&g, &params, &ActivationConfig::default()).is_err());
}
