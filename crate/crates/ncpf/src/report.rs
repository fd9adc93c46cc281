//! Report envelopes and table rows.
//!
//! Every JSON report carries the software version, the run's config
//! digest and root seed, and the canonical config itself, so any report
//! can be re-run from its own contents.

use std::collections::BTreeMap;
use std::path::Path;

use ncpf_core::{EvalReport, TrainLog};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::files;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub software: String,
    pub software_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn for_run(cfg: &RunConfig, body: T) -> Self {
        Self {
            software: crate::NAME.into(),
            software_version: crate::VERSION.into(),
            config_digest: cfg.digest(),
            seed: cfg.seed,
            config: cfg.canonical(),
            body,
        }
    }

    /// For reports not tied to a training config (synth, standalone eval).
    pub fn detached(config_digest: String, seed: u64, config: BTreeMap<String, String>, body: T) -> Self {
        Self { software: crate::NAME.into(), software_version: crate::VERSION.into(), config_digest, seed, config, body }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBody {
    /// The partition or file the metrics were computed on.
    pub on: String,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogBody {
    pub train_log: TrainLog,
}

/// One CSV row of a [`TrainLog`].
#[derive(Debug, Clone, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
    pub wall_ms: u64,
}

pub fn write_train_log(dir: &Path, cfg: &RunConfig, log: &TrainLog) -> Result<()> {
    files::write_json(&dir.join("train_log.json"), &Envelope::for_run(cfg, TrainLogBody { train_log: log.clone() }))?;
    let rows: Vec<EpochRow> = log
        .epochs
        .iter()
        .map(|e| EpochRow { epoch: e.epoch, train_loss: e.train_loss, val_rmse: e.val_rmse, wall_ms: e.wall_ms })
        .collect();
    files::write_csv(&dir.join("train_log.csv"), &rows)
}

/// An [`EvalReport`] flattened to one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub n: usize,
    pub mae: f64,
    pub mre: Option<f64>,
    pub rmse: f64,
    pub scale: String,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub epochs_trained: Option<usize>,
}

impl From<&EvalReport> for EvalRow {
    fn from(r: &EvalReport) -> Self {
        let scale = serde_json::to_value(r.scale).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        Self {
            n: r.n,
            mae: r.mae,
            mre: r.mre,
            rmse: r.rmse,
            scale,
            seed: r.metadata.as_ref().map(|m| m.seed),
            config_digest: r.metadata.as_ref().map(|m| m.config_digest.clone()),
            epochs_trained: r.metadata.as_ref().map(|m| m.epochs_trained),
        }
    }
}

pub fn write_eval<T: Serialize>(dir: &Path, stem: &str, envelope: &Envelope<T>, report: &EvalReport) -> Result<()> {
    files::write_json(&dir.join(format!("{stem}.json")), envelope)?;
    files::write_csv(&dir.join(format!("{stem}.csv")), &[EvalRow::from(report)])
}
