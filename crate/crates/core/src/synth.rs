//! Synthetic tensors drawn from a known generator, for oracle checks.
//!
//! A generator model is drawn from the `Synth` stream of the seed, then
//! `ceil(density * I*J*K)` distinct cells are sampled (partial
//! Fisher-Yates over row-major offsets, emitted in offset order), and each
//! receives `offset + scale * (generator(i,j,k) + noise)` with Gaussian
//! noise from the `Noise` stream.
//!
//! Generators:
//!
//! * `linear-cp`: CP factors uniform on `[0, 1]`.
//! * `ncpf-teacher`: an NCPF model with embeddings uniform on `[-1, 1]`,
//!   hidden weights uniform on `±gain * sqrt(3 / R)`, hidden
//!   biases uniform on `±0.5` and output weights uniform on `±2`. These
//!   scales keep hidden units off their linear regime so the data is
//!   genuinely nonlinear.

use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::baselines::CpModel;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NcpfModel};
use crate::rng::{self, Stream};
use crate::tensor::{Dims, Entry, Index3, SparseTensor3};

pub const DEFAULT_TEACHER_GAIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    LinearCp,
    NcpfTeacher,
}

impl core::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-cp" | "linear_cp" => Ok(SynthKind::LinearCp),
            "ncpf-teacher" | "ncpf_teacher" => Ok(SynthKind::NcpfTeacher),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown synth kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub dims: Dims,
    pub rank: usize,
    /// Teacher depth; ignored for `linear-cp`.
    pub layers: usize,
    pub activation: Activation,
    /// Teacher hidden-weight gain; ignored for `linear-cp`.
    pub gain: f64,
    pub density: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub scale: f64,
    pub offset: f64,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, dims: Dims, rank: usize, density: f64, seed: u64) -> Self {
        Self {
            kind,
            dims,
            rank,
            layers: 2,
            activation: Activation::Tanh,
            gain: DEFAULT_TEACHER_GAIN,
            density,
            noise_sd: 0.0,
            seed,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn entry_count(&self) -> usize {
        libm::ceil(self.density * self.dims.volume() as f64) as usize
    }
}

/// Ground-truth model behind a synthetic tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    LinearCp { model: CpModel, scale: f64, offset: f64 },
    NcpfTeacher { model: NcpfModel, scale: f64, offset: f64 },
}

impl Generator {
    /// Noiseless value in output units.
    pub fn value(&self, idx: Index3) -> Result<f64> {
        match self {
            Generator::LinearCp { model, scale, offset } => Ok(offset + scale * model.predict(idx)?),
            Generator::NcpfTeacher { model, scale, offset } => Ok(offset + scale * model.predict(idx)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub tensor: SparseTensor3,
    pub generator: Generator,
}

/// Teacher initialization described in the module docs.
pub fn teacher_model(cfg: &ModelConfig, gain: f64, seed: u64) -> Result<NcpfModel> {
    let mut rng = rng::stream(seed, Stream::Synth);
    let mut m = NcpfModel::zeros(cfg)?;
    for table in [&mut m.embed_a, &mut m.embed_b, &mut m.embed_c] {
        for v in table.as_mut_slice() {
            *v = rng::uniform(&mut rng, -1.0, 1.0);
        }
    }
    let bound = gain * libm::sqrt(3.0 / cfg.rank as f64);
    for layer in &mut m.hidden {
        for v in layer.weight.as_mut_slice() {
            *v = rng::uniform(&mut rng, -bound, bound);
        }
        for v in &mut layer.bias {
            *v = rng::uniform(&mut rng, -0.5, 0.5);
        }
    }
    for v in &mut m.out_w {
        *v = rng::uniform(&mut rng, -2.0, 2.0);
    }
    Ok(m)
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SynthData> {
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("density {} outside (0, 1]", cfg.density)));
    }
    if !(cfg.noise_sd >= 0.0) || !cfg.noise_sd.is_finite() {
        return Err(Error::InvalidConfig(alloc::format!("noise_sd {} must be finite and >= 0", cfg.noise_sd)));
    }
    let volume = cfg.dims.volume();
    let count = cfg.entry_count().min(volume);
    if count < 3 {
        return Err(Error::InvalidConfig(alloc::format!("density {} yields fewer than 3 entries", cfg.density)));
    }

    let generator = match cfg.kind {
        SynthKind::LinearCp => {
            let mut rng = rng::stream(cfg.seed, Stream::Synth);
            let mut model = CpModel::zeros(cfg.dims, cfg.rank)?;
            for f in [&mut model.factor_a, &mut model.factor_b, &mut model.factor_c] {
                for v in f.as_mut_slice() {
                    *v = rng::unit_f64(&mut rng);
                }
            }
            Generator::LinearCp { model, scale: cfg.scale, offset: cfg.offset }
        }
        SynthKind::NcpfTeacher => {
            let mcfg = ModelConfig::new(cfg.dims, cfg.rank, cfg.layers, cfg.activation);
            Generator::NcpfTeacher { model: teacher_model(&mcfg, cfg.gain, cfg.seed)?, scale: cfg.scale, offset: cfg.offset }
        }
    };

    // partial Fisher-Yates: the first `count` slots end up uniformly chosen
    let mut pick_rng = rng::stream(cfg.seed ^ 0x5EED, Stream::Synth);
    let mut cells: Vec<usize> = (0..volume).collect();
    for n in 0..count {
        let j = n + rng::below(&mut pick_rng, volume - n);
        cells.swap(n, j);
    }
    let mut chosen = cells[..count].to_vec();
    chosen.sort_unstable();

    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|_| Error::InvalidConfig("noise_sd".into()))?;
    let mut noise_rng = rng::stream(cfg.seed, Stream::Noise);
    let (scale, offset) = (cfg.scale, cfg.offset);
    let mut entries = Vec::with_capacity(count);
    for off in chosen {
        let idx = cfg.dims.unlinear(off);
        let clean = (generator.value(idx)? - offset) / scale;
        let eps = if cfg.noise_sd > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
        entries.push(Entry { index: idx, value: offset + scale * (clean + eps) });
    }
    Ok(SynthData { tensor: SparseTensor3::new(cfg.dims, entries)?, generator })
}
