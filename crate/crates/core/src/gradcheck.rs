//! Central finite-difference check of [`crate::autodiff`] gradients.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{loss, loss_and_gradients, Gradients, Sample};
use crate::error::Result;
use crate::model::NcpfModel;
use crate::rng::{self, Stream};

/// Coordinates beyond this count are subsampled.
pub const MAX_CHECKED: usize = 2000;
pub const EPSILON_RANGE: (f64, f64) = (1e-7, 1e-3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "param", rename_all = "snake_case")]
pub enum ParamCoord {
    EmbedA { row: usize, col: usize },
    EmbedB { row: usize, col: usize },
    EmbedC { row: usize, col: usize },
    HiddenWeight { layer: usize, row: usize, col: usize },
    HiddenBias { layer: usize, idx: usize },
    OutWeight { idx: usize },
    OutBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub coord: ParamCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub total_params: usize,
    pub checked: Vec<CoordCheck>,
    /// Coordinates whose perturbation moved some pre-activation across a kink.
    pub skipped_kinks: Vec<ParamCoord>,
    pub max_rel_error: f64,
}

impl NcpfModel {
    pub fn param_mut(&mut self, c: ParamCoord) -> &mut f64 {
        match c {
            ParamCoord::EmbedA { row, col } => self.embed_a.get_mut(row, col),
            ParamCoord::EmbedB { row, col } => self.embed_b.get_mut(row, col),
            ParamCoord::EmbedC { row, col } => self.embed_c.get_mut(row, col),
            ParamCoord::HiddenWeight { layer, row, col } => self.hidden[layer].weight.get_mut(row, col),
            ParamCoord::HiddenBias { layer, idx } => &mut self.hidden[layer].bias[idx],
            ParamCoord::OutWeight { idx } => &mut self.out_w[idx],
            ParamCoord::OutBias => self.out_bias.as_mut().expect("model has no output bias"),
        }
    }

    /// Every coordinate of the dense parameters (hidden layers and head).
    pub fn dense_coords(&self) -> Vec<ParamCoord> {
        let r = self.rank;
        let mut out = Vec::new();
        for layer in 0..self.depth() {
            for row in 0..r {
                out.extend((0..r).map(|col| ParamCoord::HiddenWeight { layer, row, col }));
            }
            out.extend((0..r).map(|idx| ParamCoord::HiddenBias { layer, idx }));
        }
        out.extend((0..r).map(|idx| ParamCoord::OutWeight { idx }));
        if self.out_bias.is_some() {
            out.push(ParamCoord::OutBias);
        }
        out
    }
}

impl Gradients {
    pub fn get(&self, c: ParamCoord) -> f64 {
        match c {
            ParamCoord::EmbedA { row, col } => self.d_embed_a.get(row, col),
            ParamCoord::EmbedB { row, col } => self.d_embed_b.get(row, col),
            ParamCoord::EmbedC { row, col } => self.d_embed_c.get(row, col),
            ParamCoord::HiddenWeight { layer, row, col } => self.d_hidden[layer].weight.get(row, col),
            ParamCoord::HiddenBias { layer, idx } => self.d_hidden[layer].bias[idx],
            ParamCoord::OutWeight { idx } => self.d_out_w[idx],
            ParamCoord::OutBias => self.d_out_bias.unwrap_or(0.0),
        }
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Sign pattern (-1, 0, +1) of every hidden pre-activation over the batch.
fn kink_signature(m: &NcpfModel, batch: &[Sample]) -> Result<Vec<i8>> {
    let mut sig = Vec::new();
    for s in batch {
        let tr = m.forward(s.index)?;
        for v in tr.pre_acts.iter().flatten() {
            sig.push(if *v > 0.0 { 1 } else if *v < 0.0 { -1 } else { 0 });
        }
    }
    Ok(sig)
}

/// Compares analytic gradients of the summed loss against
/// `(loss(θ+ε) - loss(θ-ε)) / 2ε`. Candidate coordinates are the embedding
/// rows touched by the batch plus every dense parameter; if there are more
/// than [`MAX_CHECKED`], a subsample is drawn from `seed`. `epsilon` is
/// clamped to [`EPSILON_RANGE`]. For ReLU-family activations, coordinates
/// whose perturbation changes any pre-activation sign are skipped.
pub fn grad_check(m: &NcpfModel, batch: &[Sample], epsilon: f64, seed: u64) -> Result<GradCheckReport> {
    let eps = epsilon.clamp(EPSILON_RANGE.0, EPSILON_RANGE.1);
    let (_, analytic) = loss_and_gradients(batch, m)?;

    let mut coords = Vec::new();
    let tables = [&analytic.d_embed_a, &analytic.d_embed_b, &analytic.d_embed_c];
    for (t, rows) in tables.into_iter().enumerate() {
        for row in rows.touched() {
            coords.extend((0..m.rank).map(|col| match t {
                0 => ParamCoord::EmbedA { row, col },
                1 => ParamCoord::EmbedB { row, col },
                _ => ParamCoord::EmbedC { row, col },
            }));
        }
    }
    coords.extend(m.dense_coords());
    if coords.len() > MAX_CHECKED {
        rng::shuffle(&mut rng::stream(seed, Stream::GradCheck), &mut coords);
        coords.truncate(MAX_CHECKED);
    }

    let base_sig = if m.activation.is_piecewise_linear() {
        Some(kink_signature(m, batch)?)
    } else {
        None
    };
    let mut probe = m.clone();
    let mut checked = Vec::with_capacity(coords.len());
    let mut skipped_kinks = Vec::new();
    for c in coords {
        let orig = *probe.param_mut(c);
        *probe.param_mut(c) = orig + eps;
        let plus = loss(batch, &probe)?;
        let crosses_plus = match &base_sig {
            Some(sig) => kink_signature(&probe, batch)? != *sig,
            None => false,
        };
        *probe.param_mut(c) = orig - eps;
        let minus = loss(batch, &probe)?;
        let crosses_minus = match &base_sig {
            Some(sig) => kink_signature(&probe, batch)? != *sig,
            None => false,
        };
        *probe.param_mut(c) = orig;
        if crosses_plus || crosses_minus {
            skipped_kinks.push(c);
            continue;
        }
        let a = analytic.get(c);
        let n = (plus - minus) / (2.0 * eps);
        checked.push(CoordCheck { coord: c, analytic: a, numeric: n, rel_error: relative_error(a, n) });
    }
    let max_rel_error = checked.iter().fold(0.0_f64, |mx, c| mx.max(c.rel_error));
    Ok(GradCheckReport { epsilon: eps, total_params: m.param_count(), checked, skipped_kinks, max_rel_error })
}
