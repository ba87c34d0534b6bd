//! Dense feed-forward networks with reverse-mode gradients and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Number of hidden fully-connected layers.
pub const HIDDEN_LAYERS: usize = 4;
/// Half-width of the uniform init of the output layer.
pub const OUTPUT_INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Fully-connected layer, optionally preceded by layer normalization of its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub norm: Option<LayerNorm>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            inputs: self.inputs,
            outputs: self.outputs,
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            norm: self.norm.as_ref().map(|n| LayerNorm {
                gain: vec![0.0; n.gain.len()],
                offset: vec![0.0; n.offset.len()],
            }),
        }
    }
}

/// ReLU network; every layer but the last is followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    /// Input after layer norm (or raw input without it).
    input: Vec<f64>,
    /// Normalized input before the affine transform, and `1/σ`.
    normed: Option<(Vec<f64>, f64)>,
    pre: Vec<f64>,
}

/// Activations saved by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    layers: Vec<LayerTape>,
}

impl MlpTape {
    /// Pre-activation values of every layer, input side first.
    pub fn pre_activations(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().map(|l| l.pre.as_slice())
    }
}

/// `round(1.5 · dim(x))`, at least 1.
pub fn hidden_width(input_dim: usize) -> usize {
    ((1.5 * input_dim as f64).round() as usize).max(1)
}

impl Mlp {
    /// Build a network with the given layer sizes (`sizes[0]` inputs).
    ///
    /// Hidden layers use He-uniform weights; the output layer is uniform in
    /// `±OUTPUT_INIT_SCALE`. With `layer_norm`, every layer after the first
    /// normalizes its input.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], layer_norm: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least one layer");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(idx, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = if idx == last {
                    OUTPUT_INIT_SCALE
                } else {
                    (6.0 / inputs as f64).sqrt()
                };
                let weight = (0..inputs * outputs)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                let norm = (layer_norm && idx > 0).then(|| LayerNorm {
                    gain: vec![1.0; inputs],
                    offset: vec![0.0; inputs],
                });
                Dense {
                    inputs,
                    outputs,
                    weight,
                    bias: vec![0.0; outputs],
                    norm,
                }
            })
            .collect();
        Self { layers }
    }

    /// Four hidden layers of width `round(1.5 · input_dim)`.
    pub fn standard<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        layer_norm: bool,
        rng: &mut R,
    ) -> Self {
        let h = hidden_width(input_dim);
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat_n(h, HIDDEN_LAYERS));
        sizes.push(output_dim);
        Self::new(&sizes, layer_norm, rng)
    }

    /// Zero the output layer so the network starts at the constant 0.
    pub fn zero_output(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gain);
                out.push(&n.offset);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain);
                out.push(&mut n.offset);
            }
        }
        out
    }

    /// `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        check_len("network input", self.input_dim(), x.len())?;
        let mut act = x.to_vec();
        let mut tapes = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let (input, normed) = match &layer.norm {
                Some(norm) => {
                    let n = act.len() as f64;
                    let mean = act.iter().sum::<f64>() / n;
                    let var = act.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = act.iter().map(|v| (v - mean) * inv).collect();
                    let y = xhat
                        .iter()
                        .zip(norm.gain.iter().zip(&norm.offset))
                        .map(|(h, (g, b))| g * h + b)
                        .collect();
                    (y, Some((xhat, inv)))
                }
                None => (act, None),
            };
            let pre: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                    layer.bias[o] + row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            act = if idx == last {
                pre.clone()
            } else {
                pre.iter().map(|v| v.max(0.0)).collect()
            };
            tapes.push(LayerTape { input, normed, pre });
        }
        Ok((act, MlpTape { layers: tapes }))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Parameter gradients and input gradient for output cotangent `dout`.
    pub fn backward(&self, tape: &MlpTape, dout: &[f64]) -> (Mlp, Vec<f64>) {
        let mut grads = self.zeros_like();
        let mut delta = dout.to_vec();
        let last = self.layers.len() - 1;
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let t = &tape.layers[idx];
            if idx != last {
                for (d, p) in delta.iter_mut().zip(&t.pre) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads.layers[idx];
            let mut dinput = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.inputs;
                for j in 0..layer.inputs {
                    g.weight[row + j] += d * t.input[j];
                    dinput[j] += d * layer.weight[row + j];
                }
            }
            delta = match (&layer.norm, &t.normed) {
                (Some(norm), Some((xhat, inv))) => {
                    let gn = g.norm.as_mut().expect("grad mirrors params");
                    let n = xhat.len() as f64;
                    let dxhat: Vec<f64> = dinput
                        .iter()
                        .zip(&norm.gain)
                        .map(|(d, gm)| d * gm)
                        .collect();
                    for j in 0..xhat.len() {
                        gn.gain[j] += dinput[j] * xhat[j];
                        gn.offset[j] += dinput[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    dxhat
                        .iter()
                        .zip(xhat)
                        .map(|(d, h)| inv * (d - mean_d - h * mean_dx))
                        .collect()
                }
                _ => dinput,
            };
        }
        (grads, delta)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Mlp,
    pub v: Mlp,
}

impl Adam {
    pub fn new(params: &Mlp) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Moment estimates are shape-congruent with `params`.
    pub fn matches(&self, params: &Mlp) -> bool {
        self.m.same_shape(params) && self.v.same_shape(params)
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Step decay: `base` before 90% of `total_steps`, `0.1 · base` from there on.
pub fn lr_schedule(base: f64, step: u64, total_steps: u64) -> f64 {
    if (step as f64) < 0.9 * total_steps as f64 {
        base
    } else {
        0.1 * base
    }
}
