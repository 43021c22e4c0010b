//! Forward and backward kernels for the policy's building blocks.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Symmetric-normalised adjacency with self-loops, `D^-1/2 (A + I) D^-1/2`.
///
/// Entry `[dst, src]` carries the message from `src` to `dst`; degrees are
/// row sums of `A + I`.
pub fn normalized_adjacency(edge_index: &[(usize, usize)], n_nodes: usize) -> Result<Array2<f64>> {
    if n_nodes == 0 {
        return Err(Error::InvalidGraph("graph must have at least one node".into()));
    }
    let mut a = Array2::<f64>::eye(n_nodes);
    for &(src, dst) in edge_index {
        if src >= n_nodes || dst >= n_nodes {
            return Err(Error::InvalidGraph(format!("edge ({src}, {dst}) out of range for {n_nodes} nodes")));
        }
        if src != dst {
            a[[dst, src]] = 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = a.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    for ((i, j), v) in a.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    Ok(a)
}

/// Cached quantities of a row-wise layer normalisation.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Per-row normalisation with population variance, then `gain * x + bias`.
pub fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LayerNormCache) {
    let width = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *s);
    }
    let out = &normalized * &gain + &bias;
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `(d_input, d_gain, d_bias)`.
pub fn layer_norm_backward(
    d_out: &Array2<f64>,
    cache: &LayerNormCache,
    gain: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d_gain = (d_out * &cache.normalized).sum_axis(Axis(0));
    let d_bias = d_out.sum_axis(Axis(0));
    let d_norm = d_out * &gain;
    let width = d_out.ncols() as f64;
    let mut d_in = Array2::zeros(d_out.raw_dim());
    for (((mut out, dn), xh), s) in d_in
        .rows_mut()
        .into_iter()
        .zip(d_norm.rows())
        .zip(cache.normalized.rows())
        .zip(cache.inv_std.iter())
    {
        let sum_dn = dn.sum();
        let sum_dn_xh = dn.dot(&xh);
        for ((o, &a), &b) in out.iter_mut().zip(dn.iter()).zip(xh.iter()) {
            *o = s / width * (width * a - sum_dn - b * sum_dn_xh);
        }
    }
    (d_in, d_gain, d_bias)
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    pub input: Array2<f64>,
    pub norm: LayerNormCache,
    pub normed: Array2<f64>,
    pub mixed: Array2<f64>,
}

/// `ReLU(adj · LayerNorm(H W))`.
pub fn gcn_layer(
    h: &Array2<f64>,
    adj: &Array2<f64>,
    weight: &Array2<f64>,
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
) -> Result<(Array2<f64>, GcnCache)> {
    if h.ncols() != weight.nrows() {
        return Err(invalid_arg(format!("features have width {} but weight expects {}", h.ncols(), weight.nrows())));
    }
    if adj.nrows() != h.nrows() || adj.ncols() != h.nrows() {
        return Err(invalid_arg(format!("adjacency {:?} does not match {} nodes", adj.dim(), h.nrows())));
    }
    if gain.len() != weight.ncols() || bias.len() != weight.ncols() {
        return Err(invalid_arg("layer-norm parameters do not match the layer width"));
    }
    let z = h.dot(weight);
    let (normed, norm) = layer_norm(&z, gain, bias);
    let mixed = adj.dot(&normed);
    let out = mixed.mapv(relu);
    Ok((out, GcnCache { input: h.clone(), norm, normed, mixed }))
}

pub struct GcnGrads {
    pub d_input: Array2<f64>,
    pub d_adj: Array2<f64>,
    pub d_weight: Array2<f64>,
    pub d_gain: Array1<f64>,
    pub d_bias: Array1<f64>,
}

pub fn gcn_layer_backward(
    d_out: &Array2<f64>,
    cache: &GcnCache,
    adj: &Array2<f64>,
    weight: &Array2<f64>,
    gain: ArrayView1<f64>,
) -> GcnGrads {
    let d_mixed = ndarray::Zip::from(d_out).and(&cache.mixed).map_collect(|&g, &m| if m > 0.0 { g } else { 0.0 });
    let d_adj = d_mixed.dot(&cache.normed.t());
    let d_normed = adj.t().dot(&d_mixed);
    let (d_z, d_gain, d_bias) = layer_norm_backward(&d_normed, &cache.norm, gain);
    GcnGrads {
        d_input: d_z.dot(&weight.t()),
        d_adj,
        d_weight: cache.input.t().dot(&d_z),
        d_gain,
        d_bias,
    }
}

/// Column-wise sum over nodes.
pub fn global_add_pool(h: ArrayView2<f64>) -> Result<Array1<f64>> {
    if h.nrows() == 0 {
        return Err(invalid_arg("cannot pool an empty node set"));
    }
    Ok(h.sum_axis(Axis(0)))
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivationConfig {
    pub selu_lambda: f64,
    pub selu_alpha: f64,
    pub alpha_dropout_p: f64,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self { selu_lambda: 1.0507009873554805, selu_alpha: 1.6732632423543772, alpha_dropout_p: 0.1 }
    }
}

impl ActivationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.selu_lambda > 0.0 && self.selu_alpha > 0.0) {
            return Err(invalid_arg("SELU coefficients must be positive"));
        }
        if !(0.0..1.0).contains(&self.alpha_dropout_p) {
            return Err(invalid_arg("alpha dropout probability must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Value a dropped unit saturates to, `-lambda * alpha`.
    pub fn saturation(&self) -> f64 {
        -self.selu_lambda * self.selu_alpha
    }
}

pub fn selu(x: f64, cfg: &ActivationConfig) -> f64 {
    if x > 0.0 {
        cfg.selu_lambda * x
    } else {
        cfg.selu_lambda * cfg.selu_alpha * x.exp_m1()
    }
}

pub fn selu_grad(x: f64, cfg: &ActivationConfig) -> f64 {
    if x > 0.0 {
        cfg.selu_lambda
    } else {
        cfg.selu_lambda * cfg.selu_alpha * x.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Keep-mask and affine correction applied by alpha dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub scale: f64,
    pub shift: f64,
}

impl DropoutMask {
    pub fn identity(n: usize) -> Self {
        Self { keep: vec![true; n], scale: 1.0, shift: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.shift == 0.0 && self.keep.iter().all(|k| *k)
    }
}

/// Dropped units are set to the SELU saturation value, then the whole vector
/// is rescaled so zero-mean unit-variance inputs keep those moments.
pub fn alpha_dropout<R: Rng + ?Sized>(
    x: ArrayView1<f64>,
    cfg: &ActivationConfig,
    mode: Mode,
    rng: &mut R,
) -> (Array1<f64>, DropoutMask) {
    let p = cfg.alpha_dropout_p;
    if mode == Mode::Eval || p == 0.0 {
        return (x.to_owned(), DropoutMask::identity(x.len()));
    }
    let sat = cfg.saturation();
    let scale = ((1.0 - p) * (1.0 + p * sat * sat)).powf(-0.5);
    let shift = -scale * sat * p;
    let keep: Vec<bool> = (0..x.len()).map(|_| rng.gen::<f64>() >= p).collect();
    let out = x
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| scale * if k { v } else { sat } + shift)
        .collect();
    (out, DropoutMask { keep, scale, shift })
}

pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

/// Gradient w.r.t. logits given the gradient w.r.t. log-probabilities.
pub fn log_softmax_backward(d_logp: ArrayView1<f64>, logp: ArrayView1<f64>) -> Array1<f64> {
    let total = d_logp.sum();
    ndarray::Zip::from(d_logp).and(logp).map_collect(|&g, &lp| g - lp.exp() * total)
}
