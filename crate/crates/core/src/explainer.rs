//! Variational mask explainer.
//!
//! Every edge and every node-feature slot carries a Gaussian latent `z`
//! with prior `N(0, 1)`; the soft mask is `sigmoid(z)`. The mean-field
//! posterior is fitted by block coordinate ascent on a reparameterised
//! Monte-Carlo ELBO whose likelihood is the policy's log-probability of its
//! own unmasked greedy action.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agent::argmax;
use crate::error::{invalid_arg, Error, Result};
use crate::graph::GraphState;
use crate::nn::ops::normalized_adjacency;
use crate::nn::policy::{backward_keyed, forward_dense_keyed, NoRng};
use crate::nn::{ActivationConfig, Mode, ParamSet, PolicyParameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainerConfig {
    pub mc_samples: usize,
    pub init_mu: f64,
    pub init_sigma: f64,
    pub block_steps: usize,
    pub lr: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self { mc_samples: 8, init_mu: 1.0, init_sigma: 0.1, block_steps: 25, lr: 0.05, tol: 1e-4, max_iters: 50 }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(invalid_arg("mc_samples must be at least 1"));
        }
        if !(self.init_sigma > 0.0) || !(self.lr > 0.0) || !(self.tol >= 0.0) || !self.init_mu.is_finite() {
            return Err(invalid_arg("init_sigma and lr must be positive, tol non-negative"));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)`, floored at the smallest positive double.
pub fn softplus(x: f64) -> f64 {
    let y = if x > 30.0 { x } else { x.exp().ln_1p() };
    y.max(f64::MIN_POSITIVE)
}

pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Independent Gaussians `N(mu_k, softplus(rho_k)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl GaussianFactor {
    pub fn new(n: usize, mu: f64, sigma: f64) -> Self {
        Self { mu: vec![mu; n], rho: vec![softplus_inv(sigma); n] }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    fn sample(&self, eps: &[f64]) -> Vec<f64> {
        self.mu.iter().zip(&self.rho).zip(eps).map(|((m, r), e)| m + softplus(*r) * e).collect()
    }
}

/// `KL(N(mu, sigma^2) || N(0, 1))` summed over latents.
pub fn kl_gaussian(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(invalid_arg("mu and sigma lengths differ"));
    }
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) {
            return Err(invalid_arg(format!("sigma {s} must be positive")));
        }
        total += 0.5 * (m * m + s * s - 1.0) - s.ln();
    }
    Ok(total)
}

/// Standard-normal draws for one Monte-Carlo sample, one vector per block.
pub type NoiseDraw = [Vec<f64>; 2];

/// Mean-field posterior over edge latents (block 0) and node-feature
/// latents (block 1, row-major `node * n_features + feature`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPosterior {
    pub edges: GaussianFactor,
    pub features: GaussianFactor,
    pub mc_samples: usize,
    pub fixed_noise: Vec<NoiseDraw>,
    pub elbo_trace: Vec<f64>,
}

impl MaskPosterior {
    pub fn new(n_edges: usize, n_feature_slots: usize, cfg: &ExplainerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let fixed_noise = (0..cfg.mc_samples).map(|_| [draw(n_edges), draw(n_feature_slots)]).collect();
        Ok(Self {
            edges: GaussianFactor::new(n_edges, cfg.init_mu, cfg.init_sigma),
            features: GaussianFactor::new(n_feature_slots, cfg.init_mu, cfg.init_sigma),
            mc_samples: cfg.mc_samples,
            fixed_noise,
            elbo_trace: Vec::new(),
        })
    }

    pub fn for_graph(g: &GraphState, cfg: &ExplainerConfig, seed: u64) -> Result<Self> {
        Self::new(g.n_edges(), g.n_nodes() * g.feature_dim(), cfg, seed)
    }

    fn block(&self, b: usize) -> &GaussianFactor {
        if b == 0 {
            &self.edges
        } else {
            &self.features
        }
    }

    fn block_mut(&mut self, b: usize) -> &mut GaussianFactor {
        if b == 0 {
            &mut self.edges
        } else {
            &mut self.features
        }
    }

    pub fn kl(&self) -> f64 {
        kl_gaussian(&self.edges.mu, &self.edges.sigma()).expect("softplus keeps sigma positive")
            + kl_gaussian(&self.features.mu, &self.features.sigma()).expect("softplus keeps sigma positive")
    }
}

/// `log p(x | z)` for latent values `z` (block 0, block 1), with gradients.
pub trait LatentLikelihood {
    fn log_likelihood(&mut self, z: &[Vec<f64>; 2]) -> Result<(f64, [Vec<f64>; 2])>;

    fn value(&mut self, z: &[Vec<f64>; 2]) -> Result<f64> {
        Ok(self.log_likelihood(z)?.0)
    }
}

/// Masks the graph, runs the eval-mode policy, and scores `target`.
pub fn masked_forward(
    params: &PolicyParameters,
    act: &ActivationConfig,
    g: &GraphState,
    edge_mask: &[f64],
    feature_mask: &Array2<f64>,
) -> Result<Array1<f64>> {
    let lik = PolicyLikelihood::new(params, act, g, 0)?;
    lik.check_masks(edge_mask, feature_mask)?;
    let (features, adj) = lik.apply(edge_mask, feature_mask);
    Ok(forward_dense_keyed(&features, &adj, params, act, Mode::Eval, &mut NoRng, lik.fingerprint)?.0)
}

/// Categorical likelihood that the masked graph keeps the policy's choice.
pub struct PolicyLikelihood<'a> {
    params: &'a PolicyParameters,
    act: &'a ActivationConfig,
    graph: &'a GraphState,
    base_adj: Array2<f64>,
    target: usize,
    fingerprint: u64,
}

impl<'a> PolicyLikelihood<'a> {
    pub fn new(params: &'a PolicyParameters, act: &'a ActivationConfig, graph: &'a GraphState, target: usize) -> Result<Self> {
        if target >= params.n_actions() {
            return Err(invalid_arg(format!("target action {target} out of range")));
        }
        let base_adj = normalized_adjacency(&graph.edge_index, graph.n_nodes())?;
        Ok(Self { params, act, graph, base_adj, target, fingerprint: params.fingerprint() })
    }

    /// Likelihood anchored at the unmasked greedy action.
    pub fn greedy(params: &'a PolicyParameters, act: &'a ActivationConfig, graph: &'a GraphState) -> Result<Self> {
        let mut lik = Self::new(params, act, graph, 0)?;
        let lp = forward_dense_keyed(&graph.node_features, &lik.base_adj, params, act, Mode::Eval, &mut NoRng, lik.fingerprint)?.0;
        lik.target = argmax(lp.as_slice().expect("contiguous"));
        Ok(lik)
    }

    pub fn target(&self) -> usize {
        self.target
    }

    fn check_masks(&self, edge_mask: &[f64], feature_mask: &Array2<f64>) -> Result<()> {
        if edge_mask.len() != self.graph.n_edges() || feature_mask.dim() != self.graph.node_features.dim() {
            return Err(invalid_arg(format!(
                "masks ({} edges, {:?} features) do not match the graph ({} edges, {:?})",
                edge_mask.len(),
                feature_mask.dim(),
                self.graph.n_edges(),
                self.graph.node_features.dim()
            )));
        }
        if edge_mask.iter().chain(feature_mask.iter()).any(|m| !(0.0..=1.0).contains(m)) {
            return Err(invalid_arg("mask values must lie in [0, 1]"));
        }
        Ok(())
    }

    fn apply(&self, edge_mask: &[f64], feature_mask: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let features = &self.graph.node_features * feature_mask;
        let mut adj = self.base_adj.clone();
        for (&(src, dst), m) in self.graph.edge_index.iter().zip(edge_mask) {
            adj[[dst, src]] = self.base_adj[[dst, src]] * m;
        }
        (features, adj)
    }
}

impl PolicyLikelihood<'_> {
    fn masks(&self, z: &[Vec<f64>; 2]) -> Result<(Vec<f64>, Array2<f64>)> {
        let edge_mask: Vec<f64> = z[0].iter().map(|&v| sigmoid(v)).collect();
        let feature_mask = Array2::from_shape_vec(self.graph.node_features.dim(), z[1].iter().map(|&v| sigmoid(v)).collect())
            .map_err(|e| invalid_arg(e.to_string()))?;
        if edge_mask.len() != self.graph.n_edges() {
            return Err(invalid_arg("edge latent count does not match the graph"));
        }
        Ok((edge_mask, feature_mask))
    }
}

impl LatentLikelihood for PolicyLikelihood<'_> {
    fn value(&mut self, z: &[Vec<f64>; 2]) -> Result<f64> {
        let (edge_mask, feature_mask) = self.masks(z)?;
        let (features, adj) = self.apply(&edge_mask, &feature_mask);
        let (lp, _) = forward_dense_keyed(&features, &adj, self.params, self.act, Mode::Eval, &mut NoRng, self.fingerprint)?;
        Ok(lp[self.target])
    }

    fn log_likelihood(&mut self, z: &[Vec<f64>; 2]) -> Result<(f64, [Vec<f64>; 2])> {
        let (edge_mask, feature_mask) = self.masks(z)?;
        let (features, adj) = self.apply(&edge_mask, &feature_mask);
        let (lp, trace) = forward_dense_keyed(&features, &adj, self.params, self.act, Mode::Eval, &mut NoRng, self.fingerprint)?;
        let mut d = Array1::zeros(lp.len());
        d[self.target] = 1.0;
        let grads = backward_keyed(&trace, self.params, self.act, d.view(), self.fingerprint)?;
        let d_edge = self
            .graph
            .edge_index
            .iter()
            .zip(&edge_mask)
            .map(|(&(src, dst), m)| grads.d_adjacency[[dst, src]] * self.base_adj[[dst, src]] * m * (1.0 - m))
            .collect();
        let d_feat = grads
            .d_features
            .iter()
            .zip(self.graph.node_features.iter())
            .zip(feature_mask.iter())
            .map(|((g, x), m)| g * x * m * (1.0 - m))
            .collect();
        Ok((lp[self.target], [d_edge, d_feat]))
    }
}

/// Monte-Carlo ELBO under the posterior's fixed noise.
pub fn elbo_with<L: LatentLikelihood + ?Sized>(q: &MaskPosterior, lik: &mut L) -> Result<f64> {
    let mut expected = 0.0;
    for eps in &q.fixed_noise {
        expected += lik.value(&[q.edges.sample(&eps[0]), q.features.sample(&eps[1])])?;
    }
    Ok(expected / q.fixed_noise.len() as f64 - q.kl())
}

pub fn elbo(q: &MaskPosterior, params: &PolicyParameters, act: &ActivationConfig, g: &GraphState, target: usize) -> Result<f64> {
    elbo_with(q, &mut PolicyLikelihood::new(params, act, g, target)?)
}

/// ELBO and its gradient w.r.t. `(mu, rho)` of one block.
fn elbo_block_grad<L: LatentLikelihood + ?Sized>(q: &MaskPosterior, lik: &mut L, block: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let f = q.block(block);
    let n = f.len();
    let s = q.fixed_noise.len() as f64;
    let mut expected = 0.0;
    let mut g_mu = vec![0.0; n];
    let mut g_rho = vec![0.0; n];
    for eps in &q.fixed_noise {
        let z = [q.edges.sample(&eps[0]), q.features.sample(&eps[1])];
        let (ll, dz) = lik.log_likelihood(&z)?;
        expected += ll;
        for k in 0..n {
            g_mu[k] += dz[block][k] / s;
            g_rho[k] += dz[block][k] * eps[block][k] * sigmoid(f.rho[k]) / s;
        }
    }
    for k in 0..n {
        let sigma = softplus(f.rho[k]);
        g_mu[k] -= f.mu[k];
        g_rho[k] -= (sigma - 1.0 / sigma) * sigmoid(f.rho[k]);
    }
    Ok((expected / s - q.kl(), g_mu, g_rho))
}

const MAX_HALVINGS: usize = 12;

/// Gradient ascent on one block with the other frozen. A step is kept only
/// if it does not lower the ELBO; otherwise the step size is halved.
fn ascend_block<L: LatentLikelihood + ?Sized>(q: &mut MaskPosterior, lik: &mut L, block: usize, cfg: &ExplainerConfig, mut current: f64) -> Result<f64> {
    if q.block(block).is_empty() {
        return Ok(current);
    }
    for _ in 0..cfg.block_steps {
        let (_, g_mu, g_rho) = elbo_block_grad(q, lik, block)?;
        let saved = q.block(block).clone();
        let mut lr = cfg.lr;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let f = q.block_mut(block);
            for k in 0..f.len() {
                f.mu[k] = saved.mu[k] + lr * g_mu[k];
                f.rho[k] = saved.rho[k] + lr * g_rho[k];
            }
            let candidate = elbo_with(q, lik)?;
            if candidate.is_finite() && candidate >= current {
                current = candidate;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            *q.block_mut(block) = saved;
            break;
        }
    }
    Ok(current)
}

/// Block coordinate ascent: edges, then features, until the ELBO gain of a
/// full sweep drops below `tol` or `max_iters` sweeps have run.
pub fn cavi_fit_with<L: LatentLikelihood + ?Sized>(mut q: MaskPosterior, lik: &mut L, cfg: &ExplainerConfig) -> Result<MaskPosterior> {
    cfg.validate()?;
    if cfg.max_iters == 0 {
        return Ok(q);
    }
    let mut current = elbo_with(&q, lik)?;
    q.elbo_trace = vec![current];
    if !current.is_finite() {
        return Err(Error::NumericalFailure { message: "initial ELBO is not finite".into(), trace: q.elbo_trace });
    }
    for _ in 0..cfg.max_iters {
        let before = current;
        current = ascend_block(&mut q, lik, 0, cfg, current)?;
        current = ascend_block(&mut q, lik, 1, cfg, current)?;
        q.elbo_trace.push(current);
        if !current.is_finite() {
            return Err(Error::NumericalFailure { message: "ELBO became non-finite".into(), trace: q.elbo_trace });
        }
        if current - before < cfg.tol {
            break;
        }
    }
    Ok(q)
}

/// Fits a mask posterior that explains the policy's greedy action on `g`.
pub fn cavi_fit(
    params: &PolicyParameters,
    act: &ActivationConfig,
    g: &GraphState,
    cfg: &ExplainerConfig,
    seed: u64,
) -> Result<(MaskPosterior, usize)> {
    let mut lik = PolicyLikelihood::greedy(params, act, g)?;
    let q = MaskPosterior::for_graph(g, cfg, seed)?;
    let q = cavi_fit_with(q, &mut lik, cfg)?;
    Ok((q, lik.target()))
}

/// Min-max normalisation; a constant group maps to 0.5.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values
        .iter()
        .map(|v| {
            if *v == lo {
                0.0
            } else if *v == hi {
                1.0
            } else {
                (v - lo) / (hi - lo)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub node_feature_importance: Array2<f64>,
    pub node_feature_uncertainty: Array2<f64>,
    pub edge_importance: Vec<f64>,
    pub edge_uncertainty: Vec<f64>,
    pub elbo_trace: Vec<f64>,
}

/// Importance is `sigmoid(mu)` min-max normalised per group; uncertainty is the raw sigma.
pub fn extract_explanation(q: &MaskPosterior, n_features: usize) -> Result<Explanation> {
    if n_features == 0 || q.features.len() % n_features != 0 {
        return Err(invalid_arg(format!("{} feature latents cannot form rows of {n_features}", q.features.len())));
    }
    let rows = q.features.len() / n_features;
    let raw_feat: Vec<f64> = q.features.mu.iter().map(|&m| sigmoid(m)).collect();
    let raw_edge: Vec<f64> = q.edges.mu.iter().map(|&m| sigmoid(m)).collect();
    let shape = (rows, n_features);
    Ok(Explanation {
        node_feature_importance: Array2::from_shape_vec(shape, min_max_normalize(&raw_feat)).expect("shape checked"),
        node_feature_uncertainty: Array2::from_shape_vec(shape, q.features.sigma()).expect("shape checked"),
        edge_importance: min_max_normalize(&raw_edge),
        edge_uncertainty: q.edges.sigma(),
        elbo_trace: q.elbo_trace.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub index: usize,
    pub feature_importance: Vec<f64>,
    pub feature_uncertainty: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeExport {
    pub src: usize,
    pub dst: usize,
    pub importance: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDoc {
    pub nodes: Vec<NodeExport>,
    pub edges: Vec<EdgeExport>,
    pub elbo_trace: Vec<f64>,
}

impl Explanation {
    pub fn to_doc(&self, edge_index: &[(usize, usize)]) -> Result<ExplanationDoc> {
        if edge_index.len() != self.edge_importance.len() {
            return Err(invalid_arg("edge list does not match the explanation"));
        }
        let nodes = (0..self.node_feature_importance.nrows())
            .map(|i| NodeExport {
                index: i,
                feature_importance: self.node_feature_importance.row(i).to_vec(),
                feature_uncertainty: self.node_feature_uncertainty.row(i).to_vec(),
            })
            .collect();
        let edges = edge_index
            .iter()
            .enumerate()
            .map(|(e, &(src, dst))| EdgeExport { src, dst, importance: self.edge_importance[e], uncertainty: self.edge_uncertainty[e] })
            .collect();
        Ok(ExplanationDoc { nodes, edges, elbo_trace: self.elbo_trace.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian(&[0.0], &[1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_gaussian(&[1.0], &[1.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_gaussian(&[0.0], &[2.0]).unwrap(), 0.5 * (3.0 - 4f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(kl_gaussian(&[0.0], &[2.0]).unwrap(), 0.8069, epsilon = 1e-4);
        assert!(kl_gaussian(&[0.0], &[0.0]).is_err());
        assert!(kl_gaussian(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn normalization_examples() {
        let n = min_max_normalize(&[0.3, 0.9, 0.6]);
        assert_eq!(n[0], 0.0);
        assert_eq!(n[1], 1.0);
        assert_abs_diff_eq!(n[2], 0.5, epsilon = 1e-12);
        assert_eq!(min_max_normalize(&[0.4; 3]), vec![0.5; 3]);
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-3, 0.1, 1.0, 5.0, 40.0] {
            assert_abs_diff_eq!(softplus(softplus_inv(y)), y, epsilon = 1e-12 * y.max(1.0));
        }
        assert!(softplus(-800.0) > 0.0);
    }
}
