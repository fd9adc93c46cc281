//! Reverse-mode gradients of the squared-error objective
//! `E = 1/2 * sum (target - y)^2` through the NCPF forward pass.
//!
//! Per sample, with residual `r = y - target`:
//!
//! ```text
//! d_logit = r * y * (1 - y)
//! d_out_w += d_logit * h_L            d_h = d_logit * out_w
//! for l = L-1 .. 0:
//!     d_pre  = d_h * act'(pre_l)
//!     dW_l  += outer(d_pre, h_{l-1})  db_l += d_pre
//!     d_h    = W_lᵀ d_pre
//! d_a_i += d_h * b_j * c_k   (and cyclically for b_j, c_k)
//! ```
//!
//! Contributions are summed over the batch in batch order.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ForwardTrace, NcpfModel};
use crate::tensor::Index3;

/// One observed entry with its normalized target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: Index3,
    pub target: f64,
}

impl Sample {
    pub fn new(index: impl Into<Index3>, target: f64) -> Self {
        Self { index: index.into(), target }
    }
}

/// Row-sparse gradient of an embedding table: only rows touched by the
/// batch are present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRows {
    width: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseRows {
    pub fn new(width: usize) -> Self {
        Self { width, rows: BTreeMap::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, r: usize) -> Option<&[f64]> {
        self.rows.get(&r).map(Vec::as_slice)
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let width = self.width;
        self.rows.entry(r).or_insert_with(|| vec![0.0; width])
    }

    /// Present rows in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn touched(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows.get(&r).map_or(0.0, |row| row[c])
    }

    pub fn add_assign(&mut self, other: &SparseRows) {
        for (r, row) in other.iter() {
            for (a, b) in self.row_mut(r).iter_mut().zip(row) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.rows.values_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|v| v.is_finite())
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Partial derivatives mirroring [`NcpfModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub d_embed_a: SparseRows,
    pub d_embed_b: SparseRows,
    pub d_embed_c: SparseRows,
    pub d_hidden: Vec<LayerGrad>,
    pub d_out_w: Vec<f64>,
    pub d_out_bias: Option<f64>,
}

impl Gradients {
    pub fn zeros_like(m: &NcpfModel) -> Self {
        let r = m.rank;
        Self {
            d_embed_a: SparseRows::new(r),
            d_embed_b: SparseRows::new(r),
            d_embed_c: SparseRows::new(r),
            d_hidden: m
                .hidden
                .iter()
                .map(|_| LayerGrad { weight: Matrix::zeros(r, r), bias: vec![0.0; r] })
                .collect(),
            d_out_w: vec![0.0; r],
            d_out_bias: m.out_bias.map(|_| 0.0),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.d_embed_a.add_assign(&other.d_embed_a);
        self.d_embed_b.add_assign(&other.d_embed_b);
        self.d_embed_c.add_assign(&other.d_embed_c);
        for (a, b) in self.d_hidden.iter_mut().zip(&other.d_hidden) {
            add(a.weight.as_mut_slice(), b.weight.as_slice());
            add(&mut a.bias, &b.bias);
        }
        add(&mut self.d_out_w, &other.d_out_w);
        if let (Some(a), Some(b)) = (self.d_out_bias.as_mut(), other.d_out_bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_embed_a.scale(s);
        self.d_embed_b.scale(s);
        self.d_embed_c.scale(s);
        for g in &mut self.d_hidden {
            g.weight.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            g.bias.iter_mut().for_each(|v| *v *= s);
        }
        self.d_out_w.iter_mut().for_each(|v| *v *= s);
        if let Some(b) = self.d_out_bias.as_mut() {
            *b *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_embed_a.is_finite()
            && self.d_embed_b.is_finite()
            && self.d_embed_c.is_finite()
            && self.d_hidden.iter().all(|g| g.weight.is_finite() && g.bias.iter().all(|v| v.is_finite()))
            && self.d_out_w.iter().chain(self.d_out_bias.iter()).all(|v| v.is_finite())
    }

    /// Largest absolute coordinate, zero for an empty gradient.
    pub fn max_abs(&self) -> f64 {
        let tables = [&self.d_embed_a, &self.d_embed_b, &self.d_embed_c];
        let rows = tables.into_iter().flat_map(|t| t.rows.values().flatten());
        let hidden = self.d_hidden.iter().flat_map(|g| g.weight.as_slice().iter().chain(&g.bias));
        rows.chain(hidden)
            .chain(&self.d_out_w)
            .chain(self.d_out_bias.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `1/2 * sum (target - y)^2` over the batch.
pub fn loss(batch: &[Sample], m: &NcpfModel) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batch.iter().try_fold(0.0, |acc, s| {
        let y = m.predict(s.index)?;
        Ok(acc + 0.5 * (s.target - y) * (s.target - y))
    })
}

/// Gradient of [`loss`] given matching forward traces.
pub fn backward(batch: &[Sample], m: &NcpfModel, traces: &[ForwardTrace]) -> Result<Gradients> {
    if batch.len() != traces.len() {
        return Err(Error::LengthMismatch { expected: batch.len(), found: traces.len() });
    }
    let mut g = Gradients::zeros_like(m);
    for (pos, (s, tr)) in batch.iter().zip(traces).enumerate() {
        if s.index != tr.index || tr.pre_acts.len() != m.depth() {
            return Err(Error::TraceMismatch(pos));
        }
        accumulate(&mut g, m, s, tr);
    }
    Ok(g)
}

fn accumulate(g: &mut Gradients, m: &NcpfModel, s: &Sample, tr: &ForwardTrace) {
    let residual = tr.y - s.target;
    let d_logit = residual * tr.y * (1.0 - tr.y);
    for (d, h) in g.d_out_w.iter_mut().zip(tr.last_hidden()) {
        *d += d_logit * h;
    }
    if let Some(b) = g.d_out_bias.as_mut() {
        *b += d_logit;
    }

    let mut d_h: Vec<f64> = m.out_w.iter().map(|w| d_logit * w).collect();
    for l in (0..m.depth()).rev() {
        let d_pre: Vec<f64> = d_h
            .iter()
            .zip(&tr.pre_acts[l])
            .zip(&tr.h_layers[l])
            .map(|((d, &pre), &post)| d * m.activation.derivative(pre, post))
            .collect();
        let lg = &mut g.d_hidden[l];
        lg.weight.add_outer(&d_pre, tr.layer_input(l));
        add(&mut lg.bias, &d_pre);
        d_h = m.hidden[l].weight.transpose_mul(&d_pre);
    }

    let idx = tr.index;
    let (a, b, c) = (m.embed_a.row(idx.i), m.embed_b.row(idx.j), m.embed_c.row(idx.k));
    let da = g.d_embed_a.row_mut(idx.i);
    for r in 0..m.rank {
        da[r] += d_h[r] * b[r] * c[r];
    }
    let db = g.d_embed_b.row_mut(idx.j);
    for r in 0..m.rank {
        db[r] += d_h[r] * a[r] * c[r];
    }
    let dc = g.d_embed_c.row_mut(idx.k);
    for r in 0..m.rank {
        dc[r] += d_h[r] * a[r] * b[r];
    }
}

/// Forward then backward; returns the batch loss alongside its gradient.
pub fn loss_and_gradients(batch: &[Sample], m: &NcpfModel) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g = Gradients::zeros_like(m);
    let mut total = 0.0;
    for s in batch {
        let tr = m.forward(s.index)?;
        total += 0.5 * (s.target - tr.y) * (s.target - tr.y);
        accumulate(&mut g, m, s, &tr);
    }
    Ok((total, g))
}
