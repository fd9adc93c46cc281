//! The subcommands, callable without the argument parser.
//!
//! Each returns a small JSON summary for stdout; the real outputs are the
//! files written under the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ncpf_core::gradcheck::{grad_check, GradCheckReport};
use ncpf_core::metrics::RunMetadata;
use ncpf_core::rng::{self, Stream};
use ncpf_core::synth::{synthesize, SynthConfig};
use ncpf_core::{evaluate, relative_change, Activation, Dims, EvalReport, NcpfModel, Preprocessor, Sample, SparseTensor3};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, ModelState};
use crate::config::{ModelKind, RunConfig, Settings};
use crate::error::{kind_name, Error, Result};
use crate::files;
use crate::report::{self, Envelope, EvalBody};
use crate::run::{self, RunOutcome};

fn hex_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Digest over a set of runs, for tables that aggregate several configs.
fn combined_digest(label: &str, runs: &[RunConfig]) -> String {
    let mut text = format!("ncpf-{label}/1\n");
    for r in runs {
        text.push_str(&r.digest());
        text.push('\n');
    }
    hex_digest(&text)
}

fn settings_label(m: &BTreeMap<String, String>) -> String {
    m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Serialize)]
struct GridRow {
    run: usize,
    selected: bool,
    status: &'static str,
    settings: String,
    config_digest: String,
    best_val_rmse: Option<f64>,
    mae: Option<f64>,
    mre: Option<f64>,
    rmse: Option<f64>,
    error: Option<String>,
}

/// Several grid points of one experiment cell, and the one chosen on
/// validation RMSE.
struct Tuned {
    runs: Vec<RunConfig>,
    outcomes: Vec<Result<RunOutcome>>,
    selected: Option<usize>,
}

impl Tuned {
    fn best(&self) -> std::result::Result<&RunOutcome, &Error> {
        match self.selected {
            Some(n) => Ok(self.outcomes[n].as_ref().expect("selected run succeeded")),
            None => Err(self.outcomes.iter().find_map(|o| o.as_ref().err()).expect("no run succeeded")),
        }
    }

    fn into_best(self) -> Result<RunOutcome> {
        match self.selected {
            Some(n) => self.outcomes.into_iter().nth(n).expect("selected index in range"),
            None => Err(first_error(vec![self])),
        }
    }

    fn grid_rows(&self) -> Vec<GridRow> {
        let labels = run::varying_keys(&self.runs);
        self.outcomes
            .iter()
            .enumerate()
            .map(|(n, o)| {
                let (status, best, test, error) = match o {
                    Ok(r) => ("ok", r.best_val_rmse(), Some(&r.test), None),
                    Err(e) => ("failed", None, None, Some(e.to_string())),
                };
                GridRow {
                    run: n,
                    selected: self.selected == Some(n),
                    status,
                    settings: settings_label(&labels[n]),
                    config_digest: self.runs[n].digest(),
                    best_val_rmse: best,
                    mae: test.map(|t| t.mae),
                    mre: test.and_then(|t| t.mre),
                    rmse: test.map(|t| t.rmse),
                    error,
                }
            })
            .collect()
    }

    fn write_grid(&self, dir: &Path) -> Result<()> {
        if self.runs.len() > 1 {
            let rows = self.grid_rows();
            let env = Envelope::detached(
                combined_digest("grid", &self.runs),
                self.runs[0].seed,
                BTreeMap::new(),
                json!({ "selected": self.selected, "runs": rows }),
            );
            files::write_json(&dir.join("grid.json"), &env)?;
            files::write_csv(&dir.join("grid.csv"), &rows)?;
        }
        Ok(())
    }
}

/// Runs every `(cell, grid point)` pair on the worker pool, each in its
/// own directory, and selects a winner per cell.
fn run_cells(
    cells: Vec<(PathBuf, Vec<RunConfig>)>,
    data: &BTreeMap<PathBuf, SparseTensor3>,
    workers: usize,
) -> Result<Vec<Tuned>> {
    let mut jobs = Vec::new();
    for (c, (dir, runs)) in cells.iter().enumerate() {
        for (n, r) in runs.iter().enumerate() {
            let d = if runs.len() == 1 { dir.clone() } else { dir.join("runs").join(format!("{n:03}")) };
            jobs.push((c, d, r.clone()));
        }
    }
    let results = run::run_parallel(workers, jobs, |(c, d, r)| {
        let out = r.data_path().and_then(|p| run::execute(&r, &data[p], Some(&d)));
        (c, out)
    })?;
    let mut tuned: Vec<Tuned> =
        cells.into_iter().map(|(_, runs)| Tuned { runs, outcomes: Vec::new(), selected: None }).collect();
    for (c, out) in results {
        tuned[c].outcomes.push(out);
    }
    for t in &mut tuned {
        t.selected = run::select_best(&t.outcomes);
    }
    Ok(tuned)
}

fn outcome_json(r: &RunOutcome) -> Value {
    json!({
        "config_digest": r.config.digest(),
        "test": r.test,
        "best_val_rmse": r.best_val_rmse(),
        "epochs_trained": r.log.epochs_trained(),
        "stopped_reason": r.log.stopped_reason,
        "dir": r.dir,
    })
}

/// Trains NCPF (or the CP baseline with `model = cp`). A grid trains every
/// point under `runs/NNN/` and reports which one validation selects.
pub fn cmd_train(s: &Settings) -> Result<Value> {
    let data = run::load_datasets(&s.runs)?;
    let mut tuned = run_cells(vec![(s.out.clone(), s.runs.clone())], &data, s.workers)?;
    let t = tuned.remove(0);
    t.write_grid(&s.out)?;
    let (runs, selected) = (t.runs.len(), t.selected);
    let best = t.into_best()?;
    Ok(json!({
        "command": "train",
        "out": s.out,
        "runs": runs,
        "selected": selected,
        "result": outcome_json(&best),
    }))
}

/// Scores a checkpoint on every entry of a COO file.
pub fn cmd_eval(checkpoint: &Path, data: &Path, dims: Option<Dims>, out: &Path) -> Result<Value> {
    let ck = Checkpoint::load(checkpoint)?;
    let truth = files::load_coo(data, Some(dims.unwrap_or(ck.dims)))?;
    if truth.dims() != ck.dims {
        return Err(Error::Format {
            path: data.to_path_buf(),
            msg: format!("dims {:?} do not match the checkpoint's {:?}", truth.dims(), ck.dims),
        });
    }
    let report = eval_checkpoint(&ck, &truth)?;
    let config = BTreeMap::from([
        ("checkpoint".to_string(), checkpoint.display().to_string()),
        ("data".to_string(), data.display().to_string()),
    ]);
    let body = EvalBody { on: data.display().to_string(), eval: report.clone() };
    let env = Envelope::detached(ck.config_digest.clone(), ck.seed, config, body);
    report::write_eval(out, "eval", &env, &report)?;
    Ok(json!({ "command": "eval", "out": out, "eval": report }))
}

pub fn eval_checkpoint(ck: &Checkpoint, truth: &SparseTensor3) -> Result<EvalReport> {
    let preds = truth.indices().map(|idx| Ok((idx, ck.model.predict(idx)?))).collect::<Result<Vec<_>>>()?;
    let mut report = evaluate(&preds, truth, &ck.preprocessor, ck.model.clips())?;
    report.metadata =
        Some(RunMetadata { seed: ck.seed, config_digest: ck.config_digest.clone(), epochs_trained: ck.epochs_trained });
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    label: String,
    status: &'static str,
    n: Option<usize>,
    mae: Option<f64>,
    mre: Option<f64>,
    rmse: Option<f64>,
    best_val_rmse: Option<f64>,
    epochs_trained: Option<usize>,
    config_digest: Option<String>,
    delta_mae_pct: Option<f64>,
    delta_mre_pct: Option<f64>,
    delta_rmse_pct: Option<f64>,
    error_kind: Option<&'static str>,
    error: Option<String>,
}

impl SweepRow {
    fn new(label: String, t: &Tuned) -> Self {
        match t.best() {
            Ok(r) => SweepRow {
                label,
                status: "ok",
                n: Some(r.test.n),
                mae: Some(r.test.mae),
                mre: r.test.mre,
                rmse: Some(r.test.rmse),
                best_val_rmse: r.best_val_rmse(),
                epochs_trained: Some(r.log.epochs_trained()),
                config_digest: Some(r.config.digest()),
                delta_mae_pct: None,
                delta_mre_pct: None,
                delta_rmse_pct: None,
                error_kind: None,
                error: None,
            },
            Err(e) => SweepRow {
                label,
                status: "failed",
                n: None,
                mae: None,
                mre: None,
                rmse: None,
                best_val_rmse: None,
                epochs_trained: None,
                config_digest: None,
                delta_mae_pct: None,
                delta_mre_pct: None,
                delta_rmse_pct: None,
                error_kind: Some(kind_name(e.kind())),
                error: Some(e.to_string()),
            },
        }
    }

    /// Fills the relative-change columns against `base`.
    fn relative_to(&mut self, base: &SweepRow) {
        let d = |a: Option<f64>, b: Option<f64>| relative_change(a?, b?).ok();
        self.delta_mae_pct = d(self.mae, base.mae);
        self.delta_mre_pct = d(self.mre, base.mre);
        self.delta_rmse_pct = d(self.rmse, base.rmse);
    }
}

fn write_table(out: &Path, stem: &str, label_key: &str, runs: &[RunConfig], rows: &[SweepRow], swept: String) -> Result<()> {
    let mut config = runs.first().map(RunConfig::canonical).unwrap_or_default();
    config.insert(label_key.to_string(), swept);
    let body = json!({ "label": label_key, "rows": rows });
    let env = Envelope::detached(combined_digest(stem, runs), runs.first().map_or(0, |r| r.seed), config, body);
    files::write_json(&out.join(format!("{stem}.json")), &env)?;
    files::write_csv(&out.join(format!("{stem}.csv")), rows)
}

fn first_error(tuned: Vec<Tuned>) -> Error {
    tuned
        .into_iter()
        .flat_map(|t| t.outcomes)
        .find_map(|o| o.err())
        .unwrap_or_else(|| Error::config("nothing to run"))
}

/// Exit status for a table: success if any row trained.
fn table_status(tuned: Vec<Tuned>) -> Result<()> {
    if tuned.iter().any(|t| t.selected.is_some()) {
        Ok(())
    } else {
        Err(first_error(tuned))
    }
}

fn require_ncpf(s: &Settings, what: &str) -> Result<()> {
    if s.runs.iter().any(|r| r.model != ModelKind::Ncpf) {
        return Err(Error::config(format!("{what} needs model = ncpf")));
    }
    Ok(())
}

/// One tuned run per depth, identical data split and seeds, sorted by L.
pub fn cmd_sweep_depth(s: &Settings) -> Result<Value> {
    require_ncpf(s, "sweep-depth")?;
    let mut depths = s.depths.clone();
    depths.sort_unstable();
    depths.dedup();
    if depths.is_empty() {
        return Err(Error::config("depths must be nonempty"));
    }
    let data = run::load_datasets(&s.runs)?;
    let cells: Vec<(PathBuf, Vec<RunConfig>)> = depths
        .iter()
        .map(|&l| (s.out.join(format!("layers-{l}")), s.runs.iter().map(|r| RunConfig { layers: l, ..r.clone() }).collect()))
        .collect();
    let tuned = run_cells(cells.clone(), &data, s.workers)?;
    let rows: Vec<SweepRow> = depths.iter().zip(&tuned).map(|(l, t)| SweepRow::new(l.to_string(), t)).collect();
    let mut all_runs = Vec::new();
    for ((dir, _), t) in cells.iter().zip(&tuned) {
        t.write_grid(dir)?;
        all_runs.extend(t.runs.iter().cloned());
    }
    let swept = depths.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
    write_table(&s.out, "sweep_depth", "layers", &all_runs, &rows, swept)?;
    table_status(tuned)?;
    Ok(json!({ "command": "sweep-depth", "out": s.out, "rows": rows }))
}

/// One tuned run per activation; relative changes are against ReLU.
pub fn cmd_sweep_activation(s: &Settings) -> Result<Value> {
    require_ncpf(s, "sweep-activation")?;
    let acts = &s.activations;
    let Some(base) = acts.iter().position(|a| *a == Activation::Relu) else {
        return Err(Error::config("activations must include relu, the reference row"));
    };
    let data = run::load_datasets(&s.runs)?;
    let cells: Vec<(PathBuf, Vec<RunConfig>)> = acts
        .iter()
        .map(|&a| {
            let dir = s.out.join(format!("activation-{}", a.to_string().replace(':', "-")));
            (dir, s.runs.iter().map(|r| RunConfig { activation: a, ..r.clone() }).collect())
        })
        .collect();
    let tuned = run_cells(cells.clone(), &data, s.workers)?;
    let mut rows: Vec<SweepRow> = acts.iter().zip(&tuned).map(|(a, t)| SweepRow::new(a.to_string(), t)).collect();
    let reference = rows[base].clone();
    for r in &mut rows {
        r.relative_to(&reference);
    }
    let mut all_runs = Vec::new();
    for ((dir, _), t) in cells.iter().zip(&tuned) {
        t.write_grid(dir)?;
        all_runs.extend(t.runs.iter().cloned());
    }
    let swept = acts.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
    write_table(&s.out, "sweep_activation", "activation", &all_runs, &rows, swept)?;
    table_status(tuned)?;
    Ok(json!({ "command": "sweep-activation", "out": s.out, "rows": rows }))
}

/// NCPF against the linear CP baseline on the same split and seeds.
pub fn cmd_compare(s: &Settings) -> Result<Value> {
    let data = run::load_datasets(&s.runs)?;
    let kinds = [ModelKind::Cp, ModelKind::Ncpf];
    let cells: Vec<(PathBuf, Vec<RunConfig>)> = kinds
        .iter()
        .map(|&k| (s.out.join(k.name()), s.runs.iter().map(|r| RunConfig { model: k, ..r.clone() }).collect()))
        .collect();
    let tuned = run_cells(cells.clone(), &data, s.workers)?;
    let mut rows: Vec<SweepRow> = kinds.iter().zip(&tuned).map(|(k, t)| SweepRow::new(k.name().into(), t)).collect();
    let reference = rows[0].clone();
    for r in &mut rows {
        r.relative_to(&reference);
    }
    let mut all_runs = Vec::new();
    for ((dir, _), t) in cells.iter().zip(&tuned) {
        t.write_grid(dir)?;
        all_runs.extend(t.runs.iter().cloned());
    }
    write_table(&s.out, "compare", "model", &all_runs, &rows, "cp,ncpf".into())?;
    table_status(tuned)?;
    Ok(json!({ "command": "compare", "out": s.out, "rows": rows }))
}

/// Writes `out` (COO) and `<stem>.generator.json` next to it.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<Value> {
    let data = synthesize(cfg)?;
    files::write_coo(out, &data.tensor)?;
    let sidecar = generator_path(out);
    let settings = serde_json::to_value(cfg).map_err(|e| Error::Json { path: sidecar.clone(), source: e })?;
    let config: BTreeMap<String, String> = settings
        .as_object()
        .map(|o| o.iter().map(|(k, v)| (k.clone(), v.to_string())).collect())
        .unwrap_or_default();
    let digest = hex_digest(&format!("ncpf-synth/1\n{settings}"));
    let env = Envelope::detached(
        digest,
        cfg.seed,
        config,
        json!({ "format": "ncpf-synth/1", "synth": cfg, "entries": data.tensor.len(), "generator": data.generator }),
    );
    files::write_json(&sidecar, &env)?;
    Ok(json!({ "command": "synth", "data": out, "generator": sidecar, "entries": data.tensor.len() }))
}

pub fn generator_path(coo: &Path) -> PathBuf {
    let stem = coo.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    coo.with_file_name(format!("{stem}.generator.json"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub batch: usize,
    /// Fail with a numeric error when the max relative error reaches this.
    pub tolerance: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, batch: 16, tolerance: None, checkpoint: None }
    }
}

/// Finite-difference check of the analytic gradients on one batch.
///
/// The model comes from `--checkpoint` or is initialized from the config.
/// The batch is drawn from the data file when one is configured, else
/// random cells with uniform targets.
pub fn cmd_grad_check(s: &Settings, opts: &GradCheckOptions) -> Result<Value> {
    let cfg = s.single()?;
    if opts.batch == 0 {
        return Err(Error::config("grad-check batch must be positive"));
    }
    let data = match &cfg.data {
        Some(p) => Some(files::load_coo(p, cfg.dims)?),
        None => None,
    };
    let model: NcpfModel = match &opts.checkpoint {
        Some(path) => match Checkpoint::load(path)?.model {
            ModelState::Ncpf(m) => m,
            ModelState::Cp(_) => {
                return Err(Error::Format { path: path.clone(), msg: "grad-check needs an NCPF checkpoint".into() })
            }
        },
        None => {
            let dims = data
                .as_ref()
                .map(SparseTensor3::dims)
                .or(cfg.dims)
                .ok_or_else(|| Error::config("grad-check needs `dims` or `data`"))?;
            NcpfModel::init(&cfg.model_config(dims), &mut cfg.init_rng())?
        }
    };
    let mut r = rng::stream(cfg.seed, Stream::GradCheck);
    let batch: Vec<Sample> = match &data {
        Some(t) => {
            let p = Preprocessor::fit(t, cfg.use_log)?;
            let mut pos: Vec<usize> = (0..t.len()).collect();
            rng::shuffle(&mut r, &mut pos);
            pos.truncate(opts.batch);
            pos.sort_unstable();
            pos.iter().map(|&n| {
                let e = t.entries()[n];
                Sample { index: e.index, target: p.transform(e.value) }
            }).collect()
        }
        None => {
            let d = model.dims();
            (0..opts.batch)
                .map(|_| {
                    let idx = (rng::below(&mut r, d.i), rng::below(&mut r, d.j), rng::below(&mut r, d.k));
                    Sample::new(idx, rng::unit_f64(&mut r))
                })
                .collect()
        }
    };
    let report: GradCheckReport = grad_check(&model, &batch, opts.epsilon, cfg.seed)?;
    let passed = opts.tolerance.map(|tol| report.max_rel_error < tol);
    let path = s.out.join("grad_check.json");
    let body = json!({ "tolerance": opts.tolerance, "passed": passed, "batch": batch.len(), "grad_check": report });
    files::write_json(&path, &Envelope::for_run(cfg, body))?;
    if passed == Some(false) {
        return Err(Error::Numeric(format!(
            "max relative error {:e} is not below {:e} (see {})",
            report.max_rel_error,
            opts.tolerance.unwrap_or_default(),
            path.display()
        )));
    }
    Ok(json!({
        "command": "grad-check",
        "out": path,
        "checked": report.checked.len(),
        "skipped_kinks": report.skipped_kinks.len(),
        "max_rel_error": report.max_rel_error,
    }))
}
