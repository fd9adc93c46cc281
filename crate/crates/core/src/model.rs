//! The NCPF forward pass.
//!
//! For an index triple `(i, j, k)`:
//!
//! 1. look up rows `a_i`, `b_j`, `c_k` of the three embedding tables
//!    (the one-hot times embedding product, never materialized);
//! 2. fuse them by Hadamard product, `h0 = a_i * b_j * c_k`;
//! 3. apply `L` square layers `h_l = act(W_l h_{l-1} + b_l)`;
//! 4. emit `y = sigmoid(w . h_L [+ bias])`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::activation::{sigmoid, Activation};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::tensor::{Dims, Index3};

/// Embedding rows are drawn uniformly from `[0, EMBED_INIT_MAX]`.
pub const EMBED_INIT_MAX: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    pub rank: usize,
    pub layers: usize,
    pub activation: Activation,
    /// Adds a scalar bias to the output head. Off by default.
    pub output_bias: bool,
}

impl ModelConfig {
    pub fn new(dims: Dims, rank: usize, layers: usize, activation: Activation) -> Self {
        Self { dims, rank, layers, activation, output_bias: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.volume() == 0 {
            return Err(Error::InvalidDims);
        }
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        self.activation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcpfModel {
    pub rank: usize,
    pub embed_a: Matrix,
    pub embed_b: Matrix,
    pub embed_c: Matrix,
    pub hidden: Vec<DenseLayer>,
    pub out_w: Vec<f64>,
    pub out_bias: Option<f64>,
    pub activation: Activation,
}

/// Intermediates of one forward pass, retained for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub index: Index3,
    pub t_fused: Vec<f64>,
    pub pre_acts: Vec<Vec<f64>>,
    pub h_layers: Vec<Vec<f64>>,
    pub logit: f64,
    pub y: f64,
}

impl ForwardTrace {
    /// `h_L`, or the fused vector when there are no hidden layers.
    pub fn last_hidden(&self) -> &[f64] {
        self.h_layers.last().unwrap_or(&self.t_fused)
    }

    /// Input to hidden layer `l`.
    pub fn layer_input(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.t_fused
        } else {
            &self.h_layers[l - 1]
        }
    }
}

/// Elementwise triple product.
pub fn fuse(a: &[f64], b: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    if c.len() != a.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: c.len() });
    }
    Ok(a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).collect())
}

impl NcpfModel {
    /// All-zero parameters of the configured shape.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let r = cfg.rank;
        Ok(Self {
            rank: r,
            embed_a: Matrix::zeros(cfg.dims.i, r),
            embed_b: Matrix::zeros(cfg.dims.j, r),
            embed_c: Matrix::zeros(cfg.dims.k, r),
            hidden: (0..cfg.layers)
                .map(|_| DenseLayer { weight: Matrix::zeros(r, r), bias: vec![0.0; r] })
                .collect(),
            out_w: vec![0.0; r],
            out_bias: cfg.output_bias.then_some(0.0),
            activation: cfg.activation,
        })
    }

    /// Random initialization. Draw order: `embed_a`, `embed_b`, `embed_c`
    /// (row-major, uniform on `[0, 0.1]`), then each hidden weight
    /// (row-major, uniform on `±sqrt(6 / 2R)`), then `out_w` (uniform on
    /// `±sqrt(6 / (R + 1))`). Biases start at zero and consume no draws.
    pub fn init<R: RngCore + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(cfg)?;
        for table in [&mut m.embed_a, &mut m.embed_b, &mut m.embed_c] {
            for v in table.as_mut_slice() {
                *v = rng::uniform(rng, 0.0, EMBED_INIT_MAX);
            }
        }
        let r = cfg.rank as f64;
        let hidden_bound = libm::sqrt(6.0 / (2.0 * r));
        for layer in &mut m.hidden {
            for v in layer.weight.as_mut_slice() {
                *v = rng::uniform(rng, -hidden_bound, hidden_bound);
            }
        }
        let out_bound = libm::sqrt(6.0 / (r + 1.0));
        for v in &mut m.out_w {
            *v = rng::uniform(rng, -out_bound, out_bound);
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.embed_a.rows(), self.embed_b.rows(), self.embed_c.rows())
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            dims: self.dims(),
            rank: self.rank,
            layers: self.depth(),
            activation: self.activation,
            output_bias: self.out_bias.is_some(),
        }
    }

    pub fn param_count(&self) -> usize {
        let r = self.rank;
        self.dims().as_array().iter().sum::<usize>() * r
            + self.depth() * (r * r + r)
            + r
            + usize::from(self.out_bias.is_some())
    }

    /// Checks that every container has the shape implied by `rank`.
    pub fn validate(&self) -> Result<()> {
        let r = self.rank;
        let bad = |what: &str| Err(Error::ShapeMismatch(format!("{what} does not match rank {r}")));
        if r == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        if [&self.embed_a, &self.embed_b, &self.embed_c].iter().any(|t| t.cols() != r || t.rows() == 0) {
            return bad("embedding table");
        }
        for layer in &self.hidden {
            if layer.weight.rows() != r || layer.weight.cols() != r || layer.bias.len() != r {
                return bad("hidden layer");
            }
        }
        if self.out_w.len() != r {
            return bad("output weight");
        }
        self.activation.validate()
    }

    pub fn check_finite(&self) -> Result<()> {
        let tables = [("embed_a", &self.embed_a), ("embed_b", &self.embed_b), ("embed_c", &self.embed_c)];
        for (name, t) in tables {
            if !t.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        for (l, layer) in self.hidden.iter().enumerate() {
            if !layer.weight.is_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("hidden layer {l}")));
            }
        }
        if self.out_w.iter().chain(self.out_bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("output head".into()));
        }
        Ok(())
    }

    pub fn embed_lookup(&self, idx: Index3) -> Result<(&[f64], &[f64], &[f64])> {
        let dims = self.dims();
        if !dims.contains(idx) {
            return Err(Error::IndexOutOfRange { index: idx, dims });
        }
        Ok((self.embed_a.row(idx.i), self.embed_b.row(idx.j), self.embed_c.row(idx.k)))
    }

    pub fn forward(&self, idx: Index3) -> Result<ForwardTrace> {
        let (a, b, c) = self.embed_lookup(idx)?;
        let t_fused = fuse(a, b, c)?;
        if t_fused.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fused embedding".into()));
        }
        let mut pre_acts = Vec::with_capacity(self.depth());
        let mut h_layers: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        for (l, layer) in self.hidden.iter().enumerate() {
            let input = h_layers.last().unwrap_or(&t_fused);
            let pre = layer.weight.affine(input, &layer.bias);
            let h = self.activation.apply_vec(&pre);
            if h.iter().chain(&pre).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("hidden layer {l}")));
            }
            pre_acts.push(pre);
            h_layers.push(h);
        }
        let last = h_layers.last().unwrap_or(&t_fused);
        let logit = self.out_w.iter().zip(last).map(|(w, h)| w * h).sum::<f64>() + self.out_bias.unwrap_or(0.0);
        if !logit.is_finite() {
            return Err(Error::NonFinite("output logit".into()));
        }
        Ok(ForwardTrace { index: idx, t_fused, pre_acts, h_layers, logit, y: sigmoid(logit) })
    }

    /// Forward over many triples, in input order.
    pub fn forward_batch(&self, indices: &[Index3]) -> Result<Vec<ForwardTrace>> {
        indices.iter().map(|&idx| self.forward(idx)).collect()
    }

    pub fn predict(&self, idx: Index3) -> Result<f64> {
        self.forward(idx).map(|t| t.y)
    }
}
