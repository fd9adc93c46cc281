//! One isolated training run and its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ncpf_core::metrics::RunMetadata;
use ncpf_core::train::{self, EpochRecord, StopReason, TrainHooks, Trainable};
use ncpf_core::{evaluate, split, CpModel, EvalReport, NcpfModel, Preprocessor, SparseTensor3, Split, TrainLog};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelState};
use crate::config::{self, ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::files;
use crate::report::{self, Envelope, EvalBody};

/// How training ended, as noted in the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub stopped_reason: StopReason,
    pub best_val_rmse: Option<f64>,
    pub validation_disabled: bool,
}

impl From<&TrainLog> for TrainSummary {
    fn from(log: &TrainLog) -> Self {
        Self {
            epochs_trained: log.epochs_trained(),
            best_epoch: log.best_epoch,
            stopped_reason: log.stopped_reason,
            best_val_rmse: log.best_val_rmse(),
            validation_disabled: log.validation_disabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEvalBody {
    #[serde(flatten)]
    pub eval: EvalBody,
    pub training: TrainSummary,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub log: TrainLog,
    pub test: EvalReport,
    pub checkpoint: Checkpoint,
    pub dir: Option<PathBuf>,
}

impl RunOutcome {
    pub fn best_val_rmse(&self) -> Option<f64> {
        self.log.best_val_rmse()
    }
}

/// Loads every distinct `data` file named by `runs` once.
pub fn load_datasets(runs: &[RunConfig]) -> Result<BTreeMap<PathBuf, SparseTensor3>> {
    let mut out = BTreeMap::new();
    for r in runs {
        let path = r.data_path()?.to_path_buf();
        if let std::collections::btree_map::Entry::Vacant(slot) = out.entry(path) {
            let t = files::load_coo(slot.key(), r.dims)?;
            slot.insert(t);
        }
    }
    Ok(out)
}

/// Wall clock, plus a checkpoint every `every` epochs when writing to disk.
struct RunHooks<'a> {
    start: Instant,
    every: usize,
    dir: Option<&'a Path>,
    cfg: &'a RunConfig,
    preprocessor: Preprocessor,
    failure: Option<Error>,
}

impl<M: Clone + Into<ModelState>> TrainHooks<M> for RunHooks<'_> {
    fn elapsed_ms(&mut self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn on_epoch(&mut self, record: &EpochRecord, model: &M) -> ncpf_core::Result<()> {
        let Some(dir) = self.dir else { return Ok(()) };
        if self.every == 0 || !(record.epoch + 1).is_multiple_of(self.every) {
            return Ok(());
        }
        let ck = Checkpoint::new(
            model.clone().into(),
            self.preprocessor,
            &self.cfg.digest(),
            self.cfg.seed,
            record.epoch,
            record.epoch + 1,
        );
        let path = dir.join("checkpoints").join(format!("epoch-{:05}.json", record.epoch));
        if let Err(e) = ck.save(&path) {
            self.failure = Some(e);
            return Err(ncpf_core::Error::InvalidConfig("checkpoint write failed".into()));
        }
        Ok(())
    }
}

fn fit<M: Trainable + Into<ModelState>>(
    mut model: M,
    cfg: &RunConfig,
    sp: &Split,
    p: &Preprocessor,
    dir: Option<&Path>,
    clip: bool,
) -> Result<(TrainLog, EvalReport, Checkpoint)> {
    let mut hooks =
        RunHooks { start: Instant::now(), every: cfg.checkpoint_every, dir, cfg, preprocessor: *p, failure: None };
    let trained = train::train_with_hooks(&mut model, sp, p, &cfg.train_config(), &mut hooks);
    if let Some(e) = hooks.failure {
        return Err(e);
    }
    let log = trained?;
    let preds = train::predictions(&model, &sp.test)?;
    let mut test = evaluate(&preds, &sp.test, p, clip)?;
    test.metadata = Some(RunMetadata { seed: cfg.seed, config_digest: cfg.digest(), epochs_trained: log.epochs_trained() });
    let ck = Checkpoint::new(model.into(), *p, &cfg.digest(), cfg.seed, log.best_epoch, log.epochs_trained());
    Ok((log, test, ck))
}

/// Split, preprocess, train and score on the test partition. With `dir`,
/// writes `config.txt`, `checkpoint.json`, `train_log.{json,csv}`,
/// `eval.{json,csv}` and optionally `split/`.
pub fn execute(cfg: &RunConfig, data: &SparseTensor3, dir: Option<&Path>) -> Result<RunOutcome> {
    let sp = split(data, cfg.fractions, cfg.split_seed())?;
    let p = Preprocessor::fit(&sp.train, cfg.use_log)?;
    if let Some(d) = dir {
        config::write_resolved(&d.join("config.txt"), cfg)?;
        if cfg.export_split {
            files::export_split(&d.join("split"), &sp, cfg.fractions)?;
        }
    }
    let dims = data.dims();
    let (log, test, checkpoint) = match cfg.model {
        ModelKind::Ncpf => {
            let m = NcpfModel::init(&cfg.model_config(dims), &mut cfg.init_rng())?;
            fit(m, cfg, &sp, &p, dir, false)?
        }
        ModelKind::Cp => {
            let m = CpModel::init(dims, cfg.rank, &mut cfg.init_rng())?;
            fit(m, cfg, &sp, &p, dir, true)?
        }
    };
    if let Some(d) = dir {
        checkpoint.save(&d.join("checkpoint.json"))?;
        report::write_train_log(d, cfg, &log)?;
        let body = TrainEvalBody {
            eval: EvalBody { on: "test".into(), eval: test.clone() },
            training: TrainSummary::from(&log),
        };
        report::write_eval(d, "eval", &Envelope::for_run(cfg, body), &test)?;
    }
    Ok(RunOutcome { config: cfg.clone(), log, test, checkpoint, dir: dir.map(Path::to_path_buf) })
}

/// Runs `jobs` on up to `workers` threads; results keep the input order.
pub fn run_parallel<J, T, F>(workers: usize, jobs: Vec<J>, f: F) -> Result<Vec<T>>
where
    J: Send,
    T: Send,
    F: Fn(J) -> T + Sync + Send,
{
    if workers <= 1 {
        return Ok(jobs.into_iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("workers: {e}")))?;
    Ok(pool.install(|| jobs.into_par_iter().map(f).collect()))
}

/// Index of the run with the lowest best validation RMSE; failed runs and
/// runs without validation rank last, ties keep the earlier run.
pub fn select_best(outcomes: &[Result<RunOutcome>]) -> Option<usize> {
    let key = |o: &Result<RunOutcome>| match o {
        Ok(r) => (0, r.best_val_rmse().unwrap_or(f64::INFINITY)),
        Err(_) => (1, f64::INFINITY),
    };
    let mut best: Option<usize> = None;
    for (n, o) in outcomes.iter().enumerate() {
        if o.is_err() {
            continue;
        }
        match best {
            Some(b) if !(key(o) < key(&outcomes[b])) => {}
            _ => best = Some(n),
        }
    }
    best
}

/// Settings that differ across `runs`, per run.
pub fn varying_keys(runs: &[RunConfig]) -> Vec<BTreeMap<String, String>> {
    let all: Vec<BTreeMap<String, String>> = runs.iter().map(RunConfig::canonical).collect();
    let Some(first) = all.first() else { return Vec::new() };
    let keys: Vec<&String> = first.keys().filter(|k| all.iter().any(|m| m.get(*k) != first.get(*k))).collect();
    all.iter()
        .map(|m| keys.iter().map(|k| ((*k).clone(), m.get(*k).cloned().unwrap_or_default())).collect())
        .collect()
}
