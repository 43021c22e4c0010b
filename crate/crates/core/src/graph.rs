//! Graph encoding of the four-dimensional network state.
//!
//! Every node carries two of the four scaled state components and the four
//! nodes form a complete directed graph:
//!
//! | node | feature 1 | feature 2 |
//! |------|-----------|-----------|
//! | 0    | SNR       | traffic   |
//! | 1    | residual  | gap       |
//! | 2    | SNR       | gap       |
//! | 3    | traffic   | residual  |

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::env::NetworkState;
use crate::error::{Error, Result};

pub const N_NODES: usize = 4;
pub const N_NODE_FEATURES: usize = 2;
pub const N_EDGES: usize = 12;

/// State-component indices carried by each node.
pub type FeaturePairing = [[usize; N_NODE_FEATURES]; N_NODES];

pub const DEFAULT_PAIRING: FeaturePairing = [[0, 1], [2, 3], [0, 3], [1, 2]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    pub node_features: Array2<f64>,
    pub edge_index: Vec<(usize, usize)>,
    pub raw_state: Option<NetworkState>,
}

impl GraphState {
    /// Arbitrary graph; edges are directed `(src, dst)` pairs without self-loops.
    pub fn new(node_features: Array2<f64>, edge_index: Vec<(usize, usize)>) -> Result<Self> {
        let n = node_features.nrows();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        for &(s, d) in &edge_index {
            if s >= n || d >= n {
                return Err(Error::InvalidGraph(format!("edge ({s}, {d}) references a node outside 0..{n}")));
            }
            if s == d {
                return Err(Error::InvalidGraph(format!("self-loop on node {s}")));
            }
        }
        Ok(Self { node_features, edge_index, raw_state: None })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_index.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }
}

/// All ordered pairs `(i, j)`, `i != j`, in row-major order.
pub fn complete_digraph(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleMode {
    Identity,
    RunningMinMax,
}

/// Per-component min-max scaler with running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    mode: ScaleMode,
    min: [f64; 4],
    max: [f64; 4],
    frozen: bool,
}

impl Default for FeatureScaler {
    fn default() -> Self {
        Self::running()
    }
}

impl FeatureScaler {
    pub fn running() -> Self {
        Self { mode: ScaleMode::RunningMinMax, min: [f64::INFINITY; 4], max: [f64::NEG_INFINITY; 4], frozen: false }
    }

    pub fn identity() -> Self {
        Self { mode: ScaleMode::Identity, ..Self::running() }
    }

    /// Scaler with fixed bounds that never updates.
    pub fn with_bounds(min: [f64; 4], max: [f64; 4]) -> Self {
        Self { mode: ScaleMode::RunningMinMax, min, max, frozen: true }
    }

    pub fn bounds(&self) -> ([f64; 4], [f64; 4]) {
        (self.min, self.max)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stops updating the running statistics.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn observe(&mut self, s: &NetworkState) {
        if self.frozen || self.mode == ScaleMode::Identity {
            return;
        }
        for (i, x) in s.to_array().into_iter().enumerate() {
            self.min[i] = self.min[i].min(x);
            self.max[i] = self.max[i].max(x);
        }
    }

    /// Scales without touching the statistics.
    pub fn transform(&self, s: &NetworkState) -> [f64; 4] {
        let raw = s.to_array();
        if self.mode == ScaleMode::Identity {
            return raw;
        }
        let mut out = [0.5; 4];
        for i in 0..4 {
            let span = self.max[i] - self.min[i];
            if span > 0.0 && span.is_finite() {
                out[i] = ((raw[i] - self.min[i]) / span).clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Updates the running min/max with `s`, then scales it.
    pub fn scale(&mut self, s: &NetworkState) -> [f64; 4] {
        self.observe(s);
        self.transform(s)
    }
}

pub fn features_from_scaled(scaled: [f64; 4], pairing: &FeaturePairing) -> Array2<f64> {
    Array2::from_shape_fn((N_NODES, N_NODE_FEATURES), |(n, k)| scaled[pairing[n][k]])
}

/// Encodes `s` with the default pairing, updating the scaler.
pub fn state_to_graph(s: &NetworkState, scaler: &mut FeatureScaler) -> Result<GraphState> {
    state_to_graph_with(s, scaler, &DEFAULT_PAIRING)
}

pub fn state_to_graph_with(s: &NetworkState, scaler: &mut FeatureScaler, pairing: &FeaturePairing) -> Result<GraphState> {
    if !s.is_finite() {
        return Err(Error::InvalidState(format!("non-finite component in {s:?}")));
    }
    let scaled = scaler.scale(s);
    Ok(GraphState {
        node_features: features_from_scaled(scaled, pairing),
        edge_index: complete_digraph(N_NODES),
        raw_state: Some(*s),
    })
}

/// Encodes `s` with the scaler's current statistics, leaving them unchanged.
pub fn encode_frozen(s: &NetworkState, scaler: &FeatureScaler) -> Result<GraphState> {
    if !s.is_finite() {
        return Err(Error::InvalidState(format!("non-finite component in {s:?}")));
    }
    Ok(GraphState {
        node_features: features_from_scaled(scaler.transform(s), &DEFAULT_PAIRING),
        edge_index: complete_digraph(N_NODES),
        raw_state: Some(*s),
    })
}
