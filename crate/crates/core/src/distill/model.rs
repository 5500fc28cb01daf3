use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DistillError;

/// Fully-connected network: rectifier on hidden layers, linear logits, softmax
/// on top. `weights[l]` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Layer inputs kept for backpropagation. `inputs[l]` feeds layer `l`;
/// `pre[l]` is layer `l`'s affine output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flatten()
            .for_each(|x| *x *= s);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flatten()
            .all(|x| x.is_finite())
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl MlpModel {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self, DistillError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(DistillError::InvalidConfig(format!(
                "layer sizes {layer_sizes:?} need an input and an output layer, all non-empty"
            )));
        }
        let weights = layer_sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(layer_sizes: &[usize], rng: &mut R) -> Result<Self, DistillError> {
        let mut m = Self::zeros(layer_sizes)?;
        for (l, w) in m.weights.iter_mut().enumerate() {
            let bound = 1.0 / (layer_sizes[l] as f64).sqrt();
            w.iter_mut()
                .for_each(|x| *x = rng.random_range(-bound..bound));
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|x| x.is_finite())
    }

    /// Weights and biases layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace, DistillError> {
        if x.len() != self.input_dim() {
            return Err(DistillError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut a = x.to_vec();
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.weights[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    self.biases[l][o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let next = if l < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok(Trace { inputs, pre })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward, DistillError> {
        let t = self.trace(x)?;
        let logits = t.logits().to_vec();
        let probs = softmax(&logits);
        Ok(Forward { logits, probs })
    }

    /// Gradient of a loss with respect to all parameters, given its
    /// gradient with respect to the logits.
    pub fn backward(&self, trace: &Trace, dlogits: &[f64]) -> Gradients {
        let mut g = Gradients::zeros_like(self);
        let mut delta = dlogits.to_vec();
        for l in (0..self.num_layers()).rev() {
            let n_in = self.layer_sizes[l];
            let input = &trace.inputs[l];
            for (o, d) in delta.iter().enumerate() {
                g.biases[l][o] = *d;
                let row = &mut g.weights[l][o * n_in..(o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(gw, a)| *gw = d * a);
            }
            if l > 0 {
                let w = &self.weights[l];
                let below = &trace.pre[l - 1];
                delta = (0..n_in)
                    .map(|i| {
                        if below[i] <= 0.0 {
                            return 0.0;
                        }
                        delta
                            .iter()
                            .enumerate()
                            .map(|(o, d)| d * w[o * n_in + i])
                            .sum()
                    })
                    .collect();
            }
        }
        g
    }

    /// Gradient step `θ ← θ − lr·g`.
    pub fn step(&mut self, g: &Gradients, lr: f64) {
        for (w, gw) in self.weights.iter_mut().zip(&g.weights) {
            w.iter_mut().zip(gw).for_each(|(x, d)| *x -= lr * d);
        }
        for (b, gb) in self.biases.iter_mut().zip(&g.biases) {
            b.iter_mut().zip(gb).for_each(|(x, d)| *x -= lr * d);
        }
    }

    /// `0.5·λ·Σ w²` over weights (biases are not penalized).
    pub fn l2_penalty(&self, lambda: f64) -> f64 {
        0.5 * lambda * self.weights.iter().flatten().map(|w| w * w).sum::<f64>()
    }

    pub fn add_l2_gradient(&self, g: &mut Gradients, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for (gw, w) in g.weights.iter_mut().zip(&self.weights) {
            gw.iter_mut().zip(w).for_each(|(d, x)| *d += lambda * x);
        }
    }
}
