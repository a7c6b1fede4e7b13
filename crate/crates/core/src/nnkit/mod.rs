//! Small dense networks with hand-written backward passes.
//!
//! Everything runs in `f64`. A forward pass returns a [`GradTape`] holding the
//! activations the matching backward pass needs; `backward` consumes the tape,
//! so a tape cannot be replayed:
//!
//! ```compile_fail
//! use adgcd::nnkit::{Activation, Mlp};
//! use rand::SeedableRng;
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let net = Mlp::new(&[2, 2], &[Activation::Identity], &mut rng).unwrap();
//! let (_, tape) = net.forward(&[1.0, 2.0]).unwrap();
//! let _ = net.backward(tape, &[1.0, 1.0]);
//! let _ = net.backward(tape, &[1.0, 1.0]);
//! ```

mod adam;
mod gradcheck;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::AdamState;
pub use gradcheck::{grad_check, FD_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored row-major
/// (`out × in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// He-uniform initialisation for ReLU layers, Glorot-uniform otherwise.
    pub fn init<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            Activation::Identity => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations cached by [`Mlp::forward`].
#[derive(Debug)]
pub struct GradTape {
    inputs: Vec<Vec<f64>>,
    preactivations: Vec<Vec<f64>>,
}

/// Parameter gradients laid out exactly like [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads(pub Vec<f64>);

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self(vec![0.0; net.n_params()])
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }
}

impl Mlp {
    /// `widths` lists every layer width including the input; `activations`
    /// has one entry per weight layer.
    pub fn new<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::ShapeMismatch("layer widths must be positive".into()));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::init(w[0], w[1], act, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch(
                "network needs at least one layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::ShapeMismatch(format!("layer {i} parameter sizes")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Flat parameter vector: for each layer, `W` row-major then `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters supplied, network has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, GradTape)> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preactivations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let pre = l.preactivation(&h);
            let next: Vec<f64> = pre.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(h);
            preactivations.push(pre);
            h = next;
        }
        if let Some(j) = h.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("network output {j}")));
        }
        Ok((
            h,
            GradTape {
                inputs,
                preactivations,
            },
        ))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Returns parameter gradients and `dL/dx` given `dL/dy`.
    pub fn backward(&self, tape: GradTape, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if tape.inputs.len() != self.layers.len()
            || tape
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.len() != l.in_dim)
        {
            return Err(Error::ShapeMismatch(
                "tape was recorded on another network".into(),
            ));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} values, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.n_params()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.n_params();
        }
        let mut delta = upstream.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[li];
            let pre = &tape.preactivations[li];
            for (d, &p) in delta.iter_mut().zip(pre) {
                *d *= l.activation.derivative(p);
            }
            let base = offsets[li];
            let (gw, gb) = grads[base..base + l.n_params()].split_at_mut(l.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (g, &xi) in gw[o * l.in_dim..(o + 1) * l.in_dim].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                gb[o] += d;
            }
            let mut dx = vec![0.0; l.in_dim];
            for (row, &d) in l.weights.chunks_exact(l.in_dim).zip(&delta) {
                if d != 0.0 {
                    for (acc, &w) in dx.iter_mut().zip(row) {
                        *acc += d * w;
                    }
                }
            }
            delta = dx;
        }
        Ok((MlpGrads(grads), delta))
    }
}

/// Gradient reversal: what a reversal connection passes backwards.
pub fn grad_reverse(g: &[f64], lambda: f64) -> Vec<f64> {
    debug_assert!(lambda >= 0.0);
    g.iter().map(|v| -lambda * v).collect()
}

/// Returns `x / ‖x‖` and `‖x‖`.
pub fn l2_normalize(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok((x.iter().map(|v| v / norm).collect(), norm))
}

/// Backward pass of [`l2_normalize`]: `(g − u (u·g)) / ‖x‖`.
pub fn l2_normalize_backward(unit: &[f64], norm: f64, upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(upstream).map(|(u, g)| u * g).sum();
    unit.iter()
        .zip(upstream)
        .map(|(u, g)| (g - u * dot) / norm)
        .collect()
}
