//! Graph policy network: stacked GCN layers with layer normalisation, a sum
//! readout, and a SELU / alpha-dropout head producing action log-probabilities.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    alpha_dropout, gcn_layer, gcn_layer_backward, global_add_pool, log_softmax, log_softmax_backward,
    normalized_adjacency, selu, selu_grad, ActivationConfig, DropoutMask, GcnCache, Mode,
};
use super::params::{uniform_init, ParamSet};
use crate::error::{invalid_arg, Error, Result};
use crate::graph::GraphState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyArch {
    pub hidden_width: usize,
    pub gcn_layers: usize,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self { hidden_width: 64, gcn_layers: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub gcn_weights: Vec<Array2<f64>>,
    pub ln_gains: Vec<Array2<f64>>,
    pub ln_biases: Vec<Array2<f64>>,
    pub head1_w: Array2<f64>,
    pub head1_b: Array2<f64>,
    pub head2_w: Array2<f64>,
    pub head2_b: Array2<f64>,
}

impl PolicyParameters {
    pub fn init<R: Rng + ?Sized>(in_features: usize, arch: PolicyArch, n_actions: usize, rng: &mut R) -> Result<Self> {
        if in_features == 0 || arch.hidden_width == 0 || arch.gcn_layers == 0 || n_actions == 0 {
            return Err(invalid_arg("policy dimensions must all be positive"));
        }
        let h = arch.hidden_width;
        let mut gcn_weights = Vec::with_capacity(arch.gcn_layers);
        for l in 0..arch.gcn_layers {
            let fan_in = if l == 0 { in_features } else { h };
            gcn_weights.push(uniform_init(fan_in, h, fan_in, rng));
        }
        Ok(Self {
            gcn_weights,
            ln_gains: vec![Array2::ones((1, h)); arch.gcn_layers],
            ln_biases: vec![Array2::zeros((1, h)); arch.gcn_layers],
            head1_w: uniform_init(h, h, h, rng),
            head1_b: uniform_init(1, h, h, rng),
            head2_w: uniform_init(h, n_actions, h, rng),
            head2_b: uniform_init(1, n_actions, h, rng),
        })
    }

    pub fn in_features(&self) -> usize {
        self.gcn_weights[0].nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.head1_w.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.head2_w.ncols()
    }

    pub fn n_layers(&self) -> usize {
        self.gcn_weights.len()
    }

    /// Checks the shape chain `in -> hidden -> ... -> hidden -> n_actions`.
    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_width();
        let n = self.n_layers();
        if n == 0 || self.ln_gains.len() != n || self.ln_biases.len() != n {
            return Err(invalid_arg("inconsistent number of GCN layers"));
        }
        for (l, w) in self.gcn_weights.iter().enumerate() {
            if w.ncols() != h || (l > 0 && w.nrows() != h) {
                return Err(invalid_arg(format!("GCN weight {l} has shape {:?}", w.dim())));
            }
            if self.ln_gains[l].dim() != (1, h) || self.ln_biases[l].dim() != (1, h) {
                return Err(invalid_arg(format!("layer-norm parameters of layer {l} do not have width {h}")));
            }
        }
        if self.head1_w.dim() != (h, h) || self.head1_b.dim() != (1, h) || self.head2_b.dim() != (1, self.n_actions()) {
            return Err(invalid_arg("head shapes are inconsistent"));
        }
        if !self.all_finite() {
            return Err(invalid_arg("non-finite parameter"));
        }
        Ok(())
    }
}

impl ParamSet for PolicyParameters {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = Vec::new();
        for l in 0..self.gcn_weights.len() {
            v.push(&self.gcn_weights[l]);
            v.push(&self.ln_gains[l]);
            v.push(&self.ln_biases[l]);
        }
        v.extend([&self.head1_w, &self.head1_b, &self.head2_w, &self.head2_b]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> = Vec::new();
        for ((w, g), b) in self.gcn_weights.iter_mut().zip(self.ln_gains.iter_mut()).zip(self.ln_biases.iter_mut()) {
            v.push(w);
            v.push(g);
            v.push(b);
        }
        v.extend([&mut self.head1_w, &mut self.head1_b, &mut self.head2_w, &mut self.head2_b]);
        v
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for l in 0..self.gcn_weights.len() {
            v.push(format!("gcn{l}.weight"));
            v.push(format!("gcn{l}.ln_gain"));
            v.push(format!("gcn{l}.ln_bias"));
        }
        v.extend(["head1.weight", "head1.bias", "head2.weight", "head2.bias"].map(String::from));
        v
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub features: Array2<f64>,
    pub adjacency: Array2<f64>,
    layers: Vec<GcnCache>,
    pooled: Array1<f64>,
    pre_selu: Array1<f64>,
    pub dropout: DropoutMask,
    head_in: Array1<f64>,
    pub log_probs: Array1<f64>,
    fingerprint: u64,
}

/// Gradients of a scalar loss w.r.t. the parameters and the graph inputs.
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub params: PolicyParameters,
    pub d_features: Array2<f64>,
    pub d_adjacency: Array2<f64>,
}

pub fn forward<R: Rng + ?Sized>(
    g: &GraphState,
    params: &PolicyParameters,
    act: &ActivationConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array1<f64>, ForwardTrace)> {
    let adj = normalized_adjacency(&g.edge_index, g.n_nodes())?;
    forward_dense(&g.node_features, &adj, params, act, mode, rng)
}

/// Deterministic inference pass; consumes no randomness.
pub fn forward_eval(g: &GraphState, params: &PolicyParameters, act: &ActivationConfig) -> Result<Array1<f64>> {
    forward(g, params, act, Mode::Eval, &mut NoRng).map(|(lp, _)| lp)
}

/// Forward pass on an explicit feature matrix and (possibly masked) adjacency.
pub fn forward_dense<R: Rng + ?Sized>(
    features: &Array2<f64>,
    adjacency: &Array2<f64>,
    params: &PolicyParameters,
    act: &ActivationConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array1<f64>, ForwardTrace)> {
    forward_dense_keyed(features, adjacency, params, act, mode, rng, params.fingerprint())
}

/// As [`forward_dense`], with the parameter fingerprint supplied by a caller
/// that evaluates the same parameters many times.
pub(crate) fn forward_dense_keyed<R: Rng + ?Sized>(
    features: &Array2<f64>,
    adjacency: &Array2<f64>,
    params: &PolicyParameters,
    act: &ActivationConfig,
    mode: Mode,
    rng: &mut R,
    fingerprint: u64,
) -> Result<(Array1<f64>, ForwardTrace)> {
    if features.ncols() != params.in_features() {
        return Err(invalid_arg(format!(
            "graph has {} node features but the policy expects {}",
            features.ncols(),
            params.in_features()
        )));
    }
    let mut h = features.clone();
    let mut layers = Vec::with_capacity(params.n_layers());
    for l in 0..params.n_layers() {
        let (out, cache) = gcn_layer(&h, adjacency, &params.gcn_weights[l], params.ln_gains[l].row(0), params.ln_biases[l].row(0))?;
        layers.push(cache);
        h = out;
    }
    let pooled = global_add_pool(h.view())?;
    let pre_selu = pooled.dot(&params.head1_w) + params.head1_b.row(0);
    let activated = pre_selu.mapv(|x| selu(x, act));
    let (head_in, dropout) = alpha_dropout(activated.view(), act, mode, rng);
    let logits = head_in.dot(&params.head2_w) + params.head2_b.row(0);
    let log_probs = log_softmax(logits.view());
    let trace = ForwardTrace {
        mode,
        features: features.clone(),
        adjacency: adjacency.clone(),
        layers,
        pooled,
        pre_selu,
        dropout,
        head_in,
        log_probs: log_probs.clone(),
        fingerprint,
    };
    Ok((log_probs, trace))
}

/// Back-propagates `d_log_probs` (gradient of a scalar loss w.r.t. the
/// log-probabilities) through the cached trace.
pub fn backward(
    trace: &ForwardTrace,
    params: &PolicyParameters,
    act: &ActivationConfig,
    d_log_probs: ArrayView1<f64>,
) -> Result<PolicyGrads> {
    backward_keyed(trace, params, act, d_log_probs, params.fingerprint())
}

pub(crate) fn backward_keyed(
    trace: &ForwardTrace,
    params: &PolicyParameters,
    act: &ActivationConfig,
    d_log_probs: ArrayView1<f64>,
    fingerprint: u64,
) -> Result<PolicyGrads> {
    if trace.layers.len() != params.n_layers()
        || trace.log_probs.len() != params.n_actions()
        || trace.pooled.len() != params.hidden_width()
    {
        return Err(Error::InvalidTrace("trace shape does not match the parameters".into()));
    }
    if trace.fingerprint != fingerprint {
        return Err(Error::InvalidTrace("parameters changed since the forward pass".into()));
    }
    if d_log_probs.len() != params.n_actions() {
        return Err(invalid_arg("upstream gradient length differs from the action count"));
    }
    let mut grads = params.zeros_like();

    let d_logits = log_softmax_backward(d_log_probs, trace.log_probs.view());
    grads.head2_w = outer(&trace.head_in, &d_logits);
    grads.head2_b.row_mut(0).assign(&d_logits);
    let d_head_in = params.head2_w.dot(&d_logits);

    let mask = &trace.dropout;
    let d_pre: Array1<f64> = d_head_in
        .iter()
        .zip(&mask.keep)
        .zip(trace.pre_selu.iter())
        .map(|((&g, &k), &x)| if k { g * mask.scale * selu_grad(x, act) } else { 0.0 })
        .collect();
    grads.head1_w = outer(&trace.pooled, &d_pre);
    grads.head1_b.row_mut(0).assign(&d_pre);
    let d_pooled = params.head1_w.dot(&d_pre);

    let n = trace.features.nrows();
    let mut d_h = d_pooled.broadcast((n, d_pooled.len())).expect("broadcast rows").to_owned();
    let mut d_adj = Array2::zeros(trace.adjacency.raw_dim());
    for l in (0..params.n_layers()).rev() {
        let g = gcn_layer_backward(&d_h, &trace.layers[l], &trace.adjacency, &params.gcn_weights[l], params.ln_gains[l].row(0));
        grads.gcn_weights[l] = g.d_weight;
        grads.ln_gains[l].row_mut(0).assign(&g.d_gain);
        grads.ln_biases[l].row_mut(0).assign(&g.d_bias);
        d_adj += &g.d_adj;
        d_h = g.d_input;
    }
    Ok(PolicyGrads { params: grads, d_features: d_h, d_adjacency: d_adj })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

/// Placeholder RNG for code paths that must not draw randomness.
pub struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        panic!("evaluation must not consume randomness")
    }
    fn next_u64(&mut self) -> u64 {
        panic!("evaluation must not consume randomness")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        panic!("evaluation must not consume randomness")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        panic!("evaluation must not consume randomness")
    }
}
