//! Linear CP factorization baseline.
//!
//! Predicts `sum_r a_ir b_jr c_kr` with no output nonlinearity, trained on
//! the same squared-error objective and loop as NCPF. Scored predictions
//! are clipped to `[0, 1]` before inverse normalization.

use alloc::vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Sample, SparseRows};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::EMBED_INIT_MAX;
use crate::optim::{ParamLayout, Parameters, Slot};
use crate::preprocess::Preprocessor;
use crate::rng;
use crate::tensor::{Dims, Index3, Split};
use crate::train::{self, TrainConfig, TrainLog, Trainable};

pub fn clip_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpModel {
    pub rank: usize,
    pub factor_a: Matrix,
    pub factor_b: Matrix,
    pub factor_c: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpGradients {
    pub d_a: SparseRows,
    pub d_b: SparseRows,
    pub d_c: SparseRows,
}

impl CpModel {
    pub fn zeros(dims: Dims, rank: usize) -> Result<Self> {
        if dims.volume() == 0 {
            return Err(Error::InvalidDims);
        }
        if rank == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        Ok(Self {
            rank,
            factor_a: Matrix::zeros(dims.i, rank),
            factor_b: Matrix::zeros(dims.j, rank),
            factor_c: Matrix::zeros(dims.k, rank),
        })
    }

    /// Factors uniform on `[0, 0.1]`, drawn a, b, c in row-major order. A
    /// zero start is a saddle where every gradient vanishes.
    pub fn init<R: RngCore + ?Sized>(dims: Dims, rank: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(dims, rank)?;
        for f in [&mut m.factor_a, &mut m.factor_b, &mut m.factor_c] {
            for v in f.as_mut_slice() {
                *v = rng::uniform(rng, 0.0, EMBED_INIT_MAX);
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.factor_a.rows(), self.factor_b.rows(), self.factor_c.rows())
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rank;
        if r == 0 || [&self.factor_a, &self.factor_b, &self.factor_c].iter().any(|f| f.cols() != r || f.rows() == 0) {
            return Err(Error::ShapeMismatch(alloc::format!("CP factors do not match rank {r}")));
        }
        Ok(())
    }

    pub fn predict(&self, idx: Index3) -> Result<f64> {
        let dims = self.dims();
        if !dims.contains(idx) {
            return Err(Error::IndexOutOfRange { index: idx, dims });
        }
        let (a, b, c) = (self.factor_a.row(idx.i), self.factor_b.row(idx.j), self.factor_c.row(idx.k));
        Ok((0..self.rank).map(|r| a[r] * b[r] * c[r]).sum())
    }
}

pub fn cp_predict(m: &CpModel, idx: Index3) -> Result<f64> {
    m.predict(idx)
}

impl Parameters for CpModel {
    type Grad = CpGradients;

    fn layout(&self) -> ParamLayout {
        let d = self.dims();
        ParamLayout { tables: vec![(d.i, self.rank), (d.j, self.rank), (d.k, self.rank)], dense: vec![] }
    }

    fn visit_updates(&mut self, g: &CpGradients, f: &mut dyn FnMut(Slot, &mut [f64], &[f64])) {
        let tables = [(&mut self.factor_a, &g.d_a), (&mut self.factor_b, &g.d_b), (&mut self.factor_c, &g.d_c)];
        for (table, (params, grads)) in tables.into_iter().enumerate() {
            for (row, gr) in grads.iter() {
                f(Slot::Row { table, row }, params.row_mut(row), gr);
            }
        }
    }

    fn grad_is_finite(g: &CpGradients) -> bool {
        g.d_a.is_finite() && g.d_b.is_finite() && g.d_c.is_finite()
    }
}

/// `1/2 * sum (target - cp_predict)^2` and its row-sparse gradient.
pub fn cp_loss_and_gradients(batch: &[Sample], m: &CpModel) -> Result<(f64, CpGradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let r = m.rank;
    let mut g = CpGradients { d_a: SparseRows::new(r), d_b: SparseRows::new(r), d_c: SparseRows::new(r) };
    let mut total = 0.0;
    for s in batch {
        let pred = m.predict(s.index)?;
        let resid = pred - s.target;
        total += 0.5 * resid * resid;
        let idx = s.index;
        let (a, b, c) = (m.factor_a.row(idx.i), m.factor_b.row(idx.j), m.factor_c.row(idx.k));
        let da = g.d_a.row_mut(idx.i);
        for q in 0..r {
            da[q] += resid * b[q] * c[q];
        }
        let db = g.d_b.row_mut(idx.j);
        for q in 0..r {
            db[q] += resid * a[q] * c[q];
        }
        let dc = g.d_c.row_mut(idx.k);
        for q in 0..r {
            dc[q] += resid * a[q] * b[q];
        }
    }
    Ok((total, g))
}

impl Trainable for CpModel {
    fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, CpGradients)> {
        cp_loss_and_gradients(batch, self)
    }

    fn scale_grad(g: &mut CpGradients, s: f64) {
        g.d_a.scale(s);
        g.d_b.scale(s);
        g.d_c.scale(s);
    }

    /// Clipped, matching how baseline outputs are scored.
    fn predict_normalized(&self, idx: Index3) -> Result<f64> {
        self.predict(idx).map(clip_unit)
    }

    fn check_finite(&self) -> Result<()> {
        if [&self.factor_a, &self.factor_b, &self.factor_c].iter().all(|f| f.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("CP factors".into()))
        }
    }
}

pub fn cp_train(m: &mut CpModel, split: &Split, p: &Preprocessor, cfg: &TrainConfig) -> Result<TrainLog> {
    train::train(m, split, p, cfg)
}
