//! Batched multilayer perceptrons used by the flat-state baselines.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{uniform_init, ParamSet};
use crate::error::{invalid_arg, Result};

/// Dense layers with ReLU between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid_arg("an MLP needs at least two positive layer sizes"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            weights.push(uniform_init(w[0], w[1], w[0], rng));
            biases.push(uniform_init(1, w[1], w[0], rng));
        }
        Ok(Self { weights, biases })
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().map(|w| w.ncols()).unwrap_or(0)
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpTrace)> {
        if x.ncols() != self.in_dim() {
            return Err(invalid_arg(format!("input width {} but MLP expects {}", x.ncols(), self.in_dim())));
        }
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = h.dot(w) + b;
            inputs.push(h);
            h = if l < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        Ok((h, MlpTrace { inputs, pre }))
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Array1<f64>> {
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| invalid_arg(e.to_string()))?;
        Ok(self.forward(&batch)?.0.row(0).to_owned())
    }

    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    pub fn backward(&self, trace: &MlpTrace, d_out: &Array2<f64>) -> (Mlp, Array2<f64>) {
        let mut grads = self.zeros_like();
        let mut d = d_out.clone();
        let last = self.weights.len() - 1;
        for l in (0..self.weights.len()).rev() {
            if l < last {
                d.zip_mut_with(&trace.pre[l], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            grads.weights[l] = trace.inputs[l].t().dot(&d);
            grads.biases[l] = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            d = d.dot(&self.weights[l].t());
        }
        (grads, d)
    }
}

impl ParamSet for Mlp {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        (0..self.weights.len()).flat_map(|l| [format!("fc{l}.weight"), format!("fc{l}.bias")]).collect()
    }
}

/// `Q = V + A - mean(A)`.
pub fn dueling_aggregate(value: f64, advantages: &[f64]) -> Vec<f64> {
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + a - mean).collect()
}

/// Q-network: either a plain MLP or a shared trunk with value and advantage heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QNetwork {
    Plain(Mlp),
    Dueling { trunk: Mlp, value: Mlp, advantage: Mlp },
}

#[derive(Debug, Clone)]
pub enum QTrace {
    Plain(MlpTrace),
    Dueling { trunk: MlpTrace, trunk_pre: Array2<f64>, value: MlpTrace, advantage: MlpTrace },
}

impl QNetwork {
    pub fn plain<R: Rng + ?Sized>(in_dim: usize, hidden: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        Ok(Self::Plain(Mlp::init(&[in_dim, hidden, hidden, n_actions], rng)?))
    }

    pub fn dueling<R: Rng + ?Sized>(in_dim: usize, hidden: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        Ok(Self::Dueling {
            trunk: Mlp::init(&[in_dim, hidden, hidden], rng)?,
            value: Mlp::init(&[hidden, 1], rng)?,
            advantage: Mlp::init(&[hidden, n_actions], rng)?,
        })
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Self::Plain(m) => m.out_dim(),
            Self::Dueling { advantage, .. } => advantage.out_dim(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, QTrace)> {
        match self {
            Self::Plain(m) => m.forward(x).map(|(q, t)| (q, QTrace::Plain(t))),
            Self::Dueling { trunk, value, advantage } => {
                let (trunk_pre, tt) = trunk.forward(x)?;
                let feat = trunk_pre.mapv(|v| v.max(0.0));
                let (v, vt) = value.forward(&feat)?;
                let (a, at) = advantage.forward(&feat)?;
                let mut q = a.clone();
                for (mut row, (vr, ar)) in q.rows_mut().into_iter().zip(v.rows().into_iter().zip(a.rows())) {
                    let agg = dueling_aggregate(vr[0], ar.as_slice().expect("contiguous row"));
                    row.iter_mut().zip(agg).for_each(|(o, x)| *o = x);
                }
                Ok((q, QTrace::Dueling { trunk: tt, trunk_pre, value: vt, advantage: at }))
            }
        }
    }

    pub fn q_values(&self, x: &[f64]) -> Result<Array1<f64>> {
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| invalid_arg(e.to_string()))?;
        Ok(self.forward(&batch)?.0.row(0).to_owned())
    }

    pub fn backward(&self, trace: &QTrace, d_q: &Array2<f64>) -> Result<QNetwork> {
        match (self, trace) {
            (Self::Plain(m), QTrace::Plain(t)) => Ok(Self::Plain(m.backward(t, d_q).0)),
            (Self::Dueling { trunk, value, advantage }, QTrace::Dueling { trunk: tt, trunk_pre, value: vt, advantage: at }) => {
                let n = d_q.ncols() as f64;
                let d_v = d_q.sum_axis(Axis(1)).insert_axis(Axis(1));
                let mut d_a = d_q.clone();
                for mut row in d_a.rows_mut() {
                    let mean = row.sum() / n;
                    row.mapv_inplace(|g| g - mean);
                }
                let (gv, dfv) = value.backward(vt, &d_v);
                let (ga, dfa) = advantage.backward(at, &d_a);
                let mut d_feat = dfv + dfa;
                d_feat.zip_mut_with(trunk_pre, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                let (gt, _) = trunk.backward(tt, &d_feat);
                Ok(Self::Dueling { trunk: gt, value: gv, advantage: ga })
            }
            _ => Err(crate::error::Error::InvalidTrace("Q-network variant and trace differ".into())),
        }
    }
}

impl ParamSet for QNetwork {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        match self {
            Self::Plain(m) => m.tensors(),
            Self::Dueling { trunk, value, advantage } => {
                let mut v = trunk.tensors();
                v.extend(value.tensors());
                v.extend(advantage.tensors());
                v
            }
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Self::Plain(m) => m.tensors_mut(),
            Self::Dueling { trunk, value, advantage } => {
                let mut v = trunk.tensors_mut();
                v.extend(value.tensors_mut());
                v.extend(advantage.tensors_mut());
                v
            }
        }
    }

    fn tensor_names(&self) -> Vec<String> {
        match self {
            Self::Plain(m) => m.tensor_names(),
            Self::Dueling { trunk, value, advantage } => {
                let mut v: Vec<String> = trunk.tensor_names().into_iter().map(|n| format!("trunk.{n}")).collect();
                v.extend(value.tensor_names().into_iter().map(|n| format!("value.{n}")));
                v.extend(advantage.tensor_names().into_iter().map(|n| format!("advantage.{n}")));
                v
            }
        }
    }
}
