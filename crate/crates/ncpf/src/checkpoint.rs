//! Self-describing JSON checkpoints.
//!
//! A checkpoint records the model kind, dims, rank, depth and activation
//! next to the full parameter arrays and the fitted preprocessor. Matrices
//! are stored as `{rows, cols, data}` with `data` row-major. Floats are
//! written in shortest round-trip form and parsed exactly, so a loaded
//! checkpoint predicts bit-identically to the one that was saved.

use std::path::Path;

use ncpf_core::{CpModel, Dims, Index3, NcpfModel, Preprocessor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;

pub const FORMAT: &str = "ncpf-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelState {
    Ncpf(NcpfModel),
    Cp(CpModel),
}

impl ModelState {
    pub fn dims(&self) -> Dims {
        match self {
            ModelState::Ncpf(m) => m.dims(),
            ModelState::Cp(m) => m.dims(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            ModelState::Ncpf(m) => m.rank,
            ModelState::Cp(m) => m.rank,
        }
    }

    pub fn layers(&self) -> usize {
        match self {
            ModelState::Ncpf(m) => m.depth(),
            ModelState::Cp(_) => 0,
        }
    }

    pub fn activation(&self) -> Option<String> {
        match self {
            ModelState::Ncpf(m) => Some(m.activation.to_string()),
            ModelState::Cp(_) => None,
        }
    }

    /// Baseline predictions are clipped to `[0, 1]` before scoring.
    pub fn clips(&self) -> bool {
        matches!(self, ModelState::Cp(_))
    }

    /// Unclipped normalized prediction.
    pub fn predict(&self, idx: Index3) -> Result<f64> {
        Ok(match self {
            ModelState::Ncpf(m) => m.predict(idx)?,
            ModelState::Cp(m) => m.predict(idx)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelState::Ncpf(m) => m.validate()?,
            ModelState::Cp(m) => m.validate()?,
        }
        Ok(())
    }
}

impl From<NcpfModel> for ModelState {
    fn from(m: NcpfModel) -> Self {
        ModelState::Ncpf(m)
    }
}

impl From<CpModel> for ModelState {
    fn from(m: CpModel) -> Self {
        ModelState::Cp(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub software_version: String,
    pub config_digest: String,
    pub seed: u64,
    /// Epoch the parameters come from.
    pub epoch: usize,
    pub epochs_trained: usize,
    pub dims: Dims,
    pub rank: usize,
    pub layers: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub activation: Option<String>,
    pub preprocessor: Preprocessor,
    pub model: ModelState,
}

impl Checkpoint {
    pub fn new(
        model: ModelState,
        preprocessor: Preprocessor,
        config_digest: &str,
        seed: u64,
        epoch: usize,
        epochs_trained: usize,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            software_version: crate::VERSION.into(),
            config_digest: config_digest.into(),
            seed,
            epoch,
            epochs_trained,
            dims: model.dims(),
            rank: model.rank(),
            layers: model.layers(),
            activation: model.activation(),
            preprocessor,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = files::read_json(path)?;
        let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
        if ck.format != FORMAT {
            return Err(bad(format!("not a checkpoint (format {:?})", ck.format)));
        }
        if ck.version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.model.validate().map_err(|e| bad(e.to_string()))?;
        let m = &ck.model;
        if m.dims() != ck.dims || m.rank() != ck.rank || m.layers() != ck.layers {
            return Err(bad("checkpoint header does not match its parameters".into()));
        }
        Ok(ck)
    }
}
