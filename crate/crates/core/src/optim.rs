//! SGD and Adam updates.
//!
//! Optimizers see a model as a set of row-indexed tables (embeddings or CP
//! factors, whose gradients are row-sparse) plus dense blocks. Adam keeps
//! moments per coordinate; embedding-row moments advance only on steps
//! where that row received a gradient, while bias correction uses the
//! global step count.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::model::NcpfModel;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    /// `(rows, width)` per row-indexed table.
    pub tables: Vec<(usize, usize)>,
    /// Length of each dense block.
    pub dense: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Row { table: usize, row: usize },
    Dense(usize),
}

/// A parameter container that optimizers can update from its gradient type.
pub trait Parameters {
    type Grad;

    fn layout(&self) -> ParamLayout;

    /// Calls `f(slot, params, grads)` for every block that has a gradient.
    /// Row slots are visited only for rows present in `g`.
    fn visit_updates(&mut self, g: &Self::Grad, f: &mut dyn FnMut(Slot, &mut [f64], &[f64]));

    fn grad_is_finite(g: &Self::Grad) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam(AdamConfig),
}

impl OptimizerKind {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerKind::Sgd { lr } => *lr,
            OptimizerKind::Adam(a) => a.lr,
        }
    }

    pub fn with_lr(&self, lr: f64) -> Self {
        match *self {
            OptimizerKind::Sgd { .. } => OptimizerKind::Sgd { lr },
            OptimizerKind::Adam(a) => OptimizerKind::Adam(AdamConfig { lr, ..a }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            OptimizerKind::Sgd { lr } => lr.is_finite() && *lr > 0.0,
            OptimizerKind::Adam(a) => {
                a.lr.is_finite()
                    && a.lr > 0.0
                    && (0.0..1.0).contains(&a.beta1)
                    && (0.0..1.0).contains(&a.beta2)
                    && a.eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("invalid optimizer settings {self:?}")))
        }
    }
}

fn check_grad<P: Parameters>(g: &P::Grad) -> Result<()> {
    if P::grad_is_finite(g) {
        Ok(())
    } else {
        Err(Error::NonFinite("gradient".into()))
    }
}

/// `θ ← θ − lr·g` on every coordinate that has a gradient entry.
pub fn sgd_step<P: Parameters>(model: &mut P, g: &P::Grad, lr: f64) -> Result<()> {
    check_grad::<P>(g)?;
    model.visit_updates(g, &mut |_, params, grads| {
        for (p, d) in params.iter_mut().zip(grads) {
            *p -= lr * d;
        }
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m_tables: Vec<Vec<f64>>,
    v_tables: Vec<Vec<f64>>,
    m_dense: Vec<Vec<f64>>,
    v_dense: Vec<Vec<f64>>,
    widths: Vec<usize>,
}

impl AdamState {
    pub fn new(layout: &ParamLayout, config: AdamConfig) -> Self {
        let tables = |l: &ParamLayout| l.tables.iter().map(|&(r, w)| vec![0.0; r * w]).collect::<Vec<_>>();
        let dense = |l: &ParamLayout| l.dense.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            config,
            t: 0,
            m_tables: tables(layout),
            v_tables: tables(layout),
            m_dense: dense(layout),
            v_dense: dense(layout),
            widths: layout.tables.iter().map(|&(_, w)| w).collect(),
        }
    }

    pub fn for_model<P: Parameters>(model: &P, config: AdamConfig) -> Self {
        Self::new(&model.layout(), config)
    }

    fn moments(&mut self, slot: Slot) -> (&mut [f64], &mut [f64]) {
        match slot {
            Slot::Row { table, row } => {
                let w = self.widths[table];
                let range = row * w..(row + 1) * w;
                (&mut self.m_tables[table][range.clone()], &mut self.v_tables[table][range])
            }
            Slot::Dense(b) => (&mut self.m_dense[b], &mut self.v_dense[b]),
        }
    }

    /// Every second-moment accumulator, for invariant checks.
    pub fn second_moments(&self) -> impl Iterator<Item = f64> + '_ {
        self.v_tables.iter().chain(&self.v_dense).flatten().copied()
    }
}

pub fn adam_step<P: Parameters>(model: &mut P, g: &P::Grad, state: &mut AdamState) -> Result<()> {
    check_grad::<P>(g)?;
    if model.layout().tables.iter().map(|&(_, w)| w).ne(state.widths.iter().copied()) {
        return Err(Error::ShapeMismatch("Adam state does not match model layout".into()));
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.t as f64;
    let bc1 = 1.0 - libm::pow(beta1, t);
    let bc2 = 1.0 - libm::pow(beta2, t);
    model.visit_updates(g, &mut |slot, params, grads| {
        let (m, v) = state.moments(slot);
        for (((p, &d), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * d;
            *v = beta2 * *v + (1.0 - beta2) * d * d;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    });
    Ok(())
}

/// Optimizer plus whatever state it carries across steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn new<P: Parameters>(kind: &OptimizerKind, model: &P) -> Self {
        match *kind {
            OptimizerKind::Sgd { lr } => Optimizer::Sgd { lr },
            OptimizerKind::Adam(cfg) => Optimizer::Adam(AdamState::for_model(model, cfg)),
        }
    }

    pub fn step<P: Parameters>(&mut self, model: &mut P, g: &P::Grad) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(model, g, *lr),
            Optimizer::Adam(state) => adam_step(model, g, state),
        }
    }
}

impl Parameters for NcpfModel {
    type Grad = Gradients;

    /// Tables: `embed_a`, `embed_b`, `embed_c`. Dense blocks: per hidden
    /// layer its weight then its bias, then `out_w`, then the output bias
    /// when enabled.
    fn layout(&self) -> ParamLayout {
        let r = self.rank;
        let d = self.dims();
        let mut dense = Vec::with_capacity(2 * self.depth() + 2);
        for _ in &self.hidden {
            dense.push(r * r);
            dense.push(r);
        }
        dense.push(r);
        if self.out_bias.is_some() {
            dense.push(1);
        }
        ParamLayout { tables: vec![(d.i, r), (d.j, r), (d.k, r)], dense }
    }

    fn visit_updates(&mut self, g: &Gradients, f: &mut dyn FnMut(Slot, &mut [f64], &[f64])) {
        let tables = [(&mut self.embed_a, &g.d_embed_a), (&mut self.embed_b, &g.d_embed_b), (&mut self.embed_c, &g.d_embed_c)];
        for (table, (params, grads)) in tables.into_iter().enumerate() {
            for (row, gr) in grads.iter() {
                f(Slot::Row { table, row }, params.row_mut(row), gr);
            }
        }
        let mut block = 0;
        for (layer, lg) in self.hidden.iter_mut().zip(&g.d_hidden) {
            f(Slot::Dense(block), layer.weight.as_mut_slice(), lg.weight.as_slice());
            f(Slot::Dense(block + 1), &mut layer.bias, &lg.bias);
            block += 2;
        }
        f(Slot::Dense(block), &mut self.out_w, &g.d_out_w);
        if let (Some(b), Some(db)) = (self.out_bias.as_mut(), g.d_out_bias) {
            f(Slot::Dense(block + 1), core::slice::from_mut(b), &[db]);
        }
    }

    fn grad_is_finite(g: &Gradients) -> bool {
        g.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One dense block, for closed-form checks.
    #[derive(Debug, Clone, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        type Grad = Vec<f64>;
        fn layout(&self) -> ParamLayout {
            ParamLayout { tables: Vec::new(), dense: vec![self.0.len()] }
        }
        fn visit_updates(&mut self, g: &Vec<f64>, f: &mut dyn FnMut(Slot, &mut [f64], &[f64])) {
            f(Slot::Dense(0), &mut self.0, g);
        }
        fn grad_is_finite(g: &Vec<f64>) -> bool {
            g.iter().all(|v| v.is_finite())
        }
    }

    #[test]
    fn sgd_definition_and_linearity() {
        let mut p = Flat(vec![1.0]);
        sgd_step(&mut p, &vec![2.0], 0.1).unwrap();
        assert!((p.0[0] - 0.8).abs() < 1e-15);

        let mut twice = Flat(vec![0.3, -1.2]);
        let mut once = twice.clone();
        let g = vec![0.5, 0.25];
        sgd_step(&mut twice, &g, 0.125).unwrap();
        sgd_step(&mut twice, &g, 0.125).unwrap();
        sgd_step(&mut once, &g, 0.25).unwrap();
        assert_eq!(twice, once);

        let mut fixed = Flat(vec![0.3]);
        sgd_step(&mut fixed, &vec![0.0], 0.1).unwrap();
        assert_eq!(fixed.0, vec![0.3]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = Flat(vec![0.0]);
        let mut s = AdamState::for_model(&p, AdamConfig::with_lr(1e-3));
        adam_step(&mut p, &vec![1.0], &mut s).unwrap();
        assert!((p.0[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = Flat(vec![0.7, -0.2]);
        let mut s = AdamState::for_model(&p, AdamConfig::default());
        adam_step(&mut p, &vec![0.0, 0.0], &mut s).unwrap();
        assert_eq!(p.0, vec![0.7, -0.2]);
        assert!(s.second_moments().all(|v| v == 0.0));
    }

    #[test]
    fn non_finite_gradient_aborts_unchanged() {
        let mut p = Flat(vec![1.0]);
        assert_eq!(sgd_step(&mut p, &vec![f64::NAN], 0.1), Err(Error::NonFinite("gradient".into())));
        let mut s = AdamState::for_model(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &vec![f64::INFINITY], &mut s).is_err());
        assert_eq!((p.0[0], s.t), (1.0, 0));
    }

    #[test]
    fn optimizer_validation() {
        assert!(OptimizerKind::Sgd { lr: 0.0 }.validate().is_err());
        assert!(OptimizerKind::Adam(AdamConfig { beta2: 1.0, ..AdamConfig::default() }).validate().is_err());
        assert!(OptimizerKind::Adam(AdamConfig::default()).validate().is_ok());
    }
}
