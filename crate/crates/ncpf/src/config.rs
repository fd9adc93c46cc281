//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` comments, blank lines ignored. A value in
//! square brackets, `lr = [1e-3, 1e-2]`, is a list: list-valued keys expand
//! to the cartesian product of runs (a grid search, selected on validation
//! RMSE). Command-line flags override file values. Relative `data` paths
//! in a file resolve against the file's directory.
//!
//! All randomness derives from the single root `seed`: the split uses
//! `derive_seed(seed, split)`, initialization the `init` stream and batch
//! shuffling the `shuffle` stream, so changing one setting never moves
//! another purpose's random draws.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ncpf_core::rng::{self, Stream};
use ncpf_core::{Activation, AdamConfig, Dims, LossScaling, ModelConfig, OptimizerKind, SplitFractions, TrainConfig};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::files;

/// `(key, default, description)` for every recognized key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data", "", "COO file of observed entries"),
    ("dims", "", "extents I,J,K; otherwise the file header or max index + 1"),
    ("split", "0.7,0.1,0.2", "train,validation,test fractions"),
    ("seed", "0", "root seed"),
    ("use_log", "true", "log(1 + x) before min-max scaling"),
    ("model", "ncpf", "ncpf or cp"),
    ("rank", "5", "embedding width R"),
    ("layers", "3", "hidden layers L"),
    ("activation", "tanh", "sigmoid, tanh, relu, leaky_relu or leaky_relu:<slope>"),
    ("output_bias", "false", "bias on the output head"),
    ("optimizer", "adam", "adam or sgd"),
    ("lr", "", "learning rate; 1e-3 for adam, 1e-2 for sgd"),
    ("beta1", "0.9", "adam"),
    ("beta2", "0.999", "adam"),
    ("adam_eps", "1e-8", "adam"),
    ("batch_size", "1024", ""),
    ("max_epochs", "1000", ""),
    ("patience", "10", "epochs without validation improvement before stopping"),
    ("min_delta", "1e-5", "smallest validation RMSE decrease that counts"),
    ("loss_scaling", "mean", "mean or sum over a batch"),
    ("checkpoint_every", "0", "also write a checkpoint every N epochs (0 = off)"),
    ("export_split", "false", "write the split as COO files plus split.json"),
    ("out", "ncpf-out", "output directory"),
    ("workers", "1", "parallel runs in sweeps and grids"),
    ("depths", "1,2,3,4,5", "sweep-depth layer counts"),
    ("activations", "relu,tanh,sigmoid,leaky_relu", "sweep-activation list"),
];

/// Keys that never expand to a grid and do not enter the digest.
const SESSION_KEYS: &[&str] = &["out", "workers", "depths", "activations"];
/// Keys whose values contain commas and so cannot be lists.
const TUPLE_KEYS: &[&str] = &["dims", "split"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    One(String),
    List(Vec<String>),
}

/// Raw settings before validation, in file order of precedence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigSource {
    values: BTreeMap<String, Value>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

fn default_of(key: &str) -> &'static str {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d).unwrap_or("")
}

fn parse_value(key: &str, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    if let Some(inner) = raw.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| Error::config(format!("{key}: unterminated list {raw:?}")))?;
        if TUPLE_KEYS.contains(&key) || key == "out" || key == "workers" {
            return Err(Error::config(format!("{key} cannot take a list")));
        }
        let items: Vec<String> = inner.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::config(format!("{key}: empty list")));
        }
        return Ok(Value::List(items));
    }
    Ok(Value::One(raw.to_string()))
}

impl ConfigSource {
    pub fn parse(text: &str) -> Result<Self> {
        let mut src = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if src.values.contains_key(k) {
                return Err(Error::config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            src.insert(k, v).map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(src)
    }

    /// Reads a config file; a relative `data` path is taken from the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut src = Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(Value::One(d)) = src.values.get_mut("data") {
            if Path::new(d.as_str()).is_relative() {
                *d = base.join(&*d).display().to_string();
            }
        }
        Ok(src)
    }

    fn insert(&mut self, key: &str, raw: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::config(format!("unknown key {key:?}")));
        }
        let v = parse_value(key, raw)?;
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    /// Overrides one key, e.g. from a `--set key=value` flag.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        self.insert(key.trim(), raw)
    }

    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, found {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    fn scalar(&self, key: &str) -> Result<String> {
        match self.values.get(key) {
            Some(Value::One(s)) => Ok(s.clone()),
            Some(Value::List(_)) => Err(Error::config(format!("{key} cannot take a list"))),
            None => Ok(default_of(key).to_string()),
        }
    }

    /// Items of a sweep list, bracketed or bare comma-separated.
    fn sweep_list(&self, key: &str) -> Vec<String> {
        match self.values.get(key) {
            Some(Value::List(v)) => v.clone(),
            Some(Value::One(s)) => split_commas(s),
            None => split_commas(default_of(key)),
        }
    }

    /// Validates everything and expands list-valued keys into the grid.
    pub fn resolve(&self) -> Result<Settings> {
        let grid_keys: Vec<(&String, &Vec<String>)> = self
            .values
            .iter()
            .filter(|(k, _)| !SESSION_KEYS.contains(&k.as_str()))
            .filter_map(|(k, v)| match v {
                Value::List(items) => Some((k, items)),
                Value::One(_) => None,
            })
            .collect();

        let mut points: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
        for (k, items) in &grid_keys {
            points = points
                .into_iter()
                .flat_map(|p| {
                    items.iter().map(move |item| {
                        let mut q = p.clone();
                        q.insert((*k).clone(), item.clone());
                        q
                    })
                })
                .collect();
        }
        let runs = points.iter().map(|p| self.resolve_point(p)).collect::<Result<Vec<_>>>()?;

        let workers = parse_num::<usize>("workers", &self.scalar("workers")?)?;
        if workers == 0 {
            return Err(Error::config("workers must be positive"));
        }
        let depths = self
            .sweep_list("depths")
            .iter()
            .map(|s| parse_num::<usize>("depths", s))
            .collect::<Result<Vec<_>>>()?;
        let activations = self
            .sweep_list("activations")
            .iter()
            .map(|s| Activation::from_str(s).map_err(|e| Error::config(format!("activations: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Settings { runs, out: PathBuf::from(self.scalar("out")?), workers, depths, activations })
    }

    fn resolve_point(&self, point: &BTreeMap<String, String>) -> Result<RunConfig> {
        let get = |k: &str| -> Result<String> {
            match point.get(k) {
                Some(v) => Ok(v.clone()),
                None => self.scalar(k),
            }
        };
        let data = get("data")?;
        let dims = get("dims")?;
        let optimizer = match get("optimizer")?.to_ascii_lowercase().as_str() {
            "adam" => {
                let lr = match get("lr")?.as_str() {
                    "" => AdamConfig::default().lr,
                    s => parse_num("lr", s)?,
                };
                OptimizerKind::Adam(AdamConfig {
                    lr,
                    beta1: parse_num("beta1", &get("beta1")?)?,
                    beta2: parse_num("beta2", &get("beta2")?)?,
                    eps: parse_num("adam_eps", &get("adam_eps")?)?,
                })
            }
            "sgd" => {
                let lr = match get("lr")?.as_str() {
                    "" => ncpf_core::train::DEFAULT_SGD_LR,
                    s => parse_num("lr", s)?,
                };
                OptimizerKind::Sgd { lr }
            }
            other => return Err(Error::config(format!("optimizer: unknown {other:?} (adam or sgd)"))),
        };
        let cfg = RunConfig {
            data: (!data.is_empty()).then(|| PathBuf::from(data)),
            dims: (!dims.is_empty()).then(|| parse_dims(&dims)).transpose()?,
            fractions: parse_fractions(&get("split")?)?,
            seed: parse_num("seed", &get("seed")?)?,
            use_log: parse_bool("use_log", &get("use_log")?)?,
            model: get("model")?.parse()?,
            rank: parse_num("rank", &get("rank")?)?,
            layers: parse_num("layers", &get("layers")?)?,
            activation: get("activation")?.parse().map_err(|e| Error::config(format!("activation: {e}")))?,
            output_bias: parse_bool("output_bias", &get("output_bias")?)?,
            optimizer,
            batch_size: parse_num("batch_size", &get("batch_size")?)?,
            max_epochs: parse_num("max_epochs", &get("max_epochs")?)?,
            patience: parse_num("patience", &get("patience")?)?,
            min_delta: parse_num("min_delta", &get("min_delta")?)?,
            loss_scaling: match get("loss_scaling")?.to_ascii_lowercase().as_str() {
                "mean" => LossScaling::Mean,
                "sum" => LossScaling::Sum,
                other => return Err(Error::config(format!("loss_scaling: unknown {other:?} (mean or sum)"))),
            },
            checkpoint_every: parse_num("checkpoint_every", &get("checkpoint_every")?)?,
            export_split: parse_bool("export_split", &get("export_split")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn split_commas(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

fn parse_num<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::config(format!("{key}: invalid number {s:?}")))
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, found {s:?}"))),
    }
}

/// `I,J,K` or `IxJxK`.
pub fn parse_dims(s: &str) -> Result<Dims> {
    let parts: Vec<&str> = s.split(|c: char| c == ',' || c == 'x' || c.is_whitespace()).filter(|p| !p.is_empty()).collect();
    if parts.len() != 3 {
        return Err(Error::config(format!("dims: expected three extents, found {s:?}")));
    }
    let d = Dims::new(parse_num("dims", parts[0])?, parse_num("dims", parts[1])?, parse_num("dims", parts[2])?);
    if d.volume() == 0 {
        return Err(Error::config("dims: extents must be positive"));
    }
    Ok(d)
}

fn parse_fractions(s: &str) -> Result<SplitFractions> {
    let parts = split_commas(s);
    if parts.len() != 3 {
        return Err(Error::config(format!("split: expected three fractions, found {s:?}")));
    }
    let f = |n: usize| parse_num::<f64>("split", &parts[n]);
    Ok(SplitFractions::new(f(0)?, f(1)?, f(2)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ncpf,
    Cp,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ncpf" => Ok(ModelKind::Ncpf),
            "cp" | "linear-cp" | "linear_cp" => Ok(ModelKind::Cp),
            other => Err(Error::config(format!("model: unknown {other:?} (ncpf or cp)"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ncpf => "ncpf",
            ModelKind::Cp => "cp",
        }
    }
}

/// One fully resolved training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub dims: Option<Dims>,
    pub fractions: SplitFractions,
    pub seed: u64,
    pub use_log: bool,
    pub model: ModelKind,
    pub rank: usize,
    pub layers: usize,
    pub activation: Activation,
    pub output_bias: bool,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub loss_scaling: LossScaling,
    pub checkpoint_every: usize,
    pub export_split: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        ConfigSource::default().resolve().expect("defaults are valid").runs.remove(0)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank must be positive"));
        }
        self.activation.validate().map_err(|e| Error::config(format!("activation: {e}")))?;
        self.train_config().validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed,
            loss_scaling: self.loss_scaling,
        }
    }

    pub fn model_config(&self, dims: Dims) -> ModelConfig {
        ModelConfig { output_bias: self.output_bias, ..ModelConfig::new(dims, self.rank, self.layers, self.activation) }
    }

    pub fn split_seed(&self) -> u64 {
        rng::derive_seed(self.seed, Stream::Split)
    }

    pub fn init_rng(&self) -> rng::Rng {
        rng::stream(self.seed, Stream::Init)
    }

    /// Every setting that can change results, normalized.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("dims", self.dims.map(|d| format!("{},{},{}", d.i, d.j, d.k)).unwrap_or_default());
        let f = self.fractions;
        put("split", format!("{:?},{:?},{:?}", f.train, f.validation, f.test));
        put("seed", self.seed.to_string());
        put("use_log", self.use_log.to_string());
        put("model", self.model.name().into());
        put("rank", self.rank.to_string());
        if self.model == ModelKind::Ncpf {
            put("layers", self.layers.to_string());
            put("activation", self.activation.to_string());
            put("output_bias", self.output_bias.to_string());
        }
        match self.optimizer {
            OptimizerKind::Adam(a) => {
                put("optimizer", "adam".into());
                put("lr", format!("{:?}", a.lr));
                put("beta1", format!("{:?}", a.beta1));
                put("beta2", format!("{:?}", a.beta2));
                put("adam_eps", format!("{:?}", a.eps));
            }
            OptimizerKind::Sgd { lr } => {
                put("optimizer", "sgd".into());
                put("lr", format!("{lr:?}"));
            }
        }
        put("batch_size", self.batch_size.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put("patience", self.patience.to_string());
        put("min_delta", format!("{:?}", self.min_delta));
        put(
            "loss_scaling",
            match self.loss_scaling {
                LossScaling::Mean => "mean".into(),
                LossScaling::Sum => "sum".into(),
            },
        );
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("export_split", self.export_split.to_string());
        m
    }

    /// Hex SHA-256 of the canonical `key=value` lines.
    pub fn digest(&self) -> String {
        let mut text = String::from("ncpf-config/1\n");
        for (k, v) in self.canonical() {
            let _ = writeln!(text, "{k}={v}");
        }
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// The canonical settings as a config file that re-creates this run.
    pub fn to_config_text(&self) -> String {
        let mut text = String::new();
        for (k, v) in self.canonical() {
            if !v.is_empty() {
                let _ = writeln!(text, "{k} = {v}");
            }
        }
        text
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::config("no data file given (set `data`)"))
    }
}

/// Output of [`ConfigSource::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// Grid points, at least one.
    pub runs: Vec<RunConfig>,
    pub out: PathBuf,
    pub workers: usize,
    pub depths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Settings {
    pub fn single(&self) -> Result<&RunConfig> {
        match self.runs.as_slice() {
            [one] => Ok(one),
            _ => Err(Error::config("this command takes no list-valued settings")),
        }
    }
}

/// Loads `path` if given, then applies `overrides` in order.
pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<ConfigSource> {
    let mut src = match path {
        Some(p) => ConfigSource::load(p)?,
        None => ConfigSource::default(),
    };
    for o in overrides {
        src.set_assignment(o)?;
    }
    Ok(src)
}

pub fn write_resolved(path: &Path, cfg: &RunConfig) -> Result<()> {
    files::write_text(path, &cfg.to_config_text())
}
