use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncpf::commands::{self, GradCheckOptions};
use ncpf::config::{self, ConfigSource, Settings};
use ncpf::{files, Error, Result};
use ncpf_core::synth::{SynthConfig, SynthKind, DEFAULT_TEACHER_GAIN};
use ncpf_core::Activation;

/// Neural CP factorization for sparse 3-order tensor completion.
#[derive(Parser)]
#[command(name = "ncpf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model (or a grid) and score it on the test split.
    Train(RunArgs),
    /// Score a checkpoint on a COO file or an exported split partition.
    Eval(EvalArgs),
    /// Train once per depth and tabulate test MAE/MRE/RMSE.
    SweepDepth {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated layer counts.
        #[arg(long)]
        depths: Option<String>,
    },
    /// Train once per activation; relative changes are against ReLU.
    SweepActivation {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated activations; must include relu.
        #[arg(long)]
        activations: Option<String>,
    },
    /// Generate a synthetic COO tensor and its generator sidecar.
    Synth(SynthArgs),
    /// NCPF against the linear CP baseline on identical splits.
    Compare(RunArgs),
    /// Compare analytic gradients with central differences.
    GradCheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Entries in the checked batch.
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Exit with status 3 unless the max relative error is below this.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Check this NCPF checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(short, long)]
    out: Option<String>,
    #[arg(short = 'j', long)]
    workers: Option<String>,
}

impl RunArgs {
    fn source(&self) -> Result<ConfigSource> {
        let mut src = config::load_with_overrides(self.config.as_deref(), &self.set)?;
        let flags = [("data", &self.data), ("dims", &self.dims), ("seed", &self.seed), ("out", &self.out), ("workers", &self.workers)];
        for (key, value) in flags {
            if let Some(v) = value {
                src.set(key, v)?;
            }
        }
        Ok(src)
    }

    fn settings(&self) -> Result<Settings> {
        self.source()?.resolve()
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// COO file to score.
    #[arg(long, conflicts_with = "split")]
    data: Option<PathBuf>,
    /// `split.json` written by `export_split = true`.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Partition of `--split` to score.
    #[arg(long, default_value = "test")]
    partition: String,
    #[arg(long)]
    dims: Option<String>,
    #[arg(short, long, default_value = "ncpf-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// linear-cp or ncpf-teacher.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Teacher depth.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Teacher hidden-weight gain.
    #[arg(long, default_value_t = DEFAULT_TEACHER_GAIN)]
    gain: f64,
    #[arg(long)]
    density: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Values become `offset + scale * (generator + noise)`.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    /// Output COO path; the generator goes to `<stem>.generator.json`.
    #[arg(short, long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Train(a) => commands::cmd_train(&a.settings()?),
        Command::Eval(a) => {
            let dims = a.dims.as_deref().map(config::parse_dims).transpose()?;
            match (&a.data, &a.split) {
                (Some(data), None) => commands::cmd_eval(&a.checkpoint, data, dims, &a.out),
                (None, Some(manifest)) => {
                    let (_, m) = files::import_split(manifest)?;
                    let file = match a.partition.as_str() {
                        "train" => m.files.train,
                        "validation" => m.files.validation,
                        "test" => m.files.test,
                        other => return Err(Error::config(format!("unknown partition {other:?}"))),
                    };
                    let dir = manifest.parent().map(PathBuf::from).unwrap_or_default();
                    commands::cmd_eval(&a.checkpoint, &dir.join(file), dims.or(Some(m.dims)), &a.out)
                }
                _ => Err(Error::config("eval needs --data or --split")),
            }
        }
        Command::SweepDepth { run, depths } => {
            let mut src = run.source()?;
            if let Some(d) = depths {
                src.set("depths", &d)?;
            }
            commands::cmd_sweep_depth(&src.resolve()?)
        }
        Command::SweepActivation { run, activations } => {
            let mut src = run.source()?;
            if let Some(a) = activations {
                src.set("activations", &a)?;
            }
            commands::cmd_sweep_activation(&src.resolve()?)
        }
        Command::Synth(a) => {
            let kind: SynthKind = a.kind.parse()?;
            let activation: Activation = a.activation.parse()?;
            let cfg = SynthConfig {
                layers: a.layers,
                activation,
                gain: a.gain,
                noise_sd: a.noise_sd,
                scale: a.scale,
                offset: a.offset,
                ..SynthConfig::new(kind, config::parse_dims(&a.dims)?, a.rank, a.density, a.seed)
            };
            commands::cmd_synth(&cfg, &a.out)
        }
        Command::Compare(a) => commands::cmd_compare(&a.settings()?),
        Command::GradCheck { run, epsilon, batch, tolerance, checkpoint } => {
            let opts = GradCheckOptions { epsilon, batch, tolerance, checkpoint };
            commands::cmd_grad_check(&run.settings()?, &opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = Error::config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
