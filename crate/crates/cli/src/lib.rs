//! The `gatgan` command line: training, generation, evaluation and the
//! ablation study, driven by a flat TOML config plus flag overrides.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 usage/config/validation error,
//! 3 training divergence.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod ablate;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod generate;
pub mod train;

pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DIVERGED: i32 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError {
            code: Self::IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<gatgan::Error> for CliError {
    fn from(e: gatgan::Error) -> Self {
        let code = match e {
            gatgan::Error::Diverged { .. } => CliError::DIVERGED,
            gatgan::Error::Io { .. } => CliError::IO,
            _ => CliError::USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gatgan", version, about = "Graph-attention adversarial autoencoder for time series")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input CSV (one row per time step).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tau: Option<usize>,
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Model variant; a comma-separated list for `ablate`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub variant: Vec<String>,
    /// Any config key, e.g. `--set epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = config::parse_override)]
    pub set: Vec<(String, toml::Value)>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Ftd,
    Predictive,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Prior,
    Reconstruct,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ToyArg {
    CoupledSines,
    ArProcess,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, the loss log and the config snapshot.
    Train {
        /// Continue from a checkpoint that carries trainer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample synthetic windows from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of windows.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Min/max sidecar; defaults to `normalization.json` beside the checkpoint.
        #[arg(long)]
        normalization: Option<PathBuf>,
        /// Permit sampling from a model with zero training epochs.
        #[arg(long)]
        allow_untrained: bool,
    },
    /// Score synthetic data against real data.
    Eval {
        #[arg(value_enum)]
        metric: MetricArg,
        /// Real CSV; same as `--data`.
        #[arg(long)]
        real: Option<PathBuf>,
        /// Synthetic CSV of stacked windows, τ rows each.
        #[arg(long)]
        synthetic: PathBuf,
        /// Embedder checkpoint, required for FTD.
        #[arg(long)]
        embedder: Option<PathBuf>,
    },
    /// Train and score every configured variant at every configured τ.
    Ablate,
    /// Train the transformer embedder used by FTD.
    TrainEmbedder,
    /// Write a synthetic toy series as CSV.
    Toy {
        #[arg(long, value_enum, default_value = "coupled-sines")]
        kind: ToyArg,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        features: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// Destination CSV.
        output: PathBuf,
    },
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

fn int(v: usize) -> toml::Value {
    toml::Value::Integer(v as i64)
}

fn string(s: &str) -> toml::Value {
    toml::Value::String(s.to_string())
}

/// Flag overrides in application order: `--set` first, then named flags.
fn overrides(global: &GlobalArgs, command: &Command) -> Result<Vec<(String, toml::Value)>, CliError> {
    let mut o = global.set.clone();
    if let Some(p) = &global.data {
        o.push(("data".into(), path_value(p)));
    }
    if let Some(p) = &global.out {
        o.push(("out".into(), path_value(p)));
    }
    if let Some(s) = global.seed {
        o.push(("seed".into(), toml::Value::Integer(s as i64)));
    }
    if let Some(t) = global.tau {
        o.push(("tau".into(), int(t)));
    }
    if let Some(r) = global.runs {
        o.push(("runs".into(), int(r)));
    }
    if !global.variant.is_empty() {
        for v in &global.variant {
            v.parse::<gatgan::Variant>()?;
        }
        if let [single] = global.variant.as_slice() {
            o.push(("variant".into(), string(single)));
        }
        let list = global.variant.iter().map(|v| string(v)).collect();
        o.push(("variants".into(), toml::Value::Array(list)));
    }
    match command {
        Command::Generate { k, mode, .. } => {
            if let Some(k) = k {
                o.push(("generate_k".into(), int(*k)));
            }
            if let Some(m) = mode {
                let m = match m {
                    ModeArg::Prior => "prior",
                    ModeArg::Reconstruct => "reconstruct",
                };
                o.push(("generation_mode".into(), string(m)));
            }
        }
        Command::Eval { metric, real, .. } => {
            let m = match metric {
                MetricArg::Ftd => "ftd",
                MetricArg::Predictive => "predictive",
                MetricArg::Both => "both",
            };
            o.push(("metrics".into(), string(m)));
            if let Some(p) = real {
                o.push(("data".into(), path_value(p)));
            }
        }
        Command::Toy {
            kind,
            length,
            features,
            noise,
            ..
        } => {
            let k = match kind {
                ToyArg::CoupledSines => "coupled_sines",
                ToyArg::ArProcess => "ar_process",
            };
            o.push(("toy".into(), string(k)));
            if let Some(n) = length {
                o.push(("toy_length".into(), int(*n)));
            }
            if let Some(n) = features {
                o.push(("toy_features".into(), int(*n)));
            }
            if let Some(n) = noise {
                o.push(("toy_noise".into(), toml::Value::Float(*n)));
            }
        }
        Command::Train { .. } | Command::Ablate | Command::TrainEmbedder => {}
    }
    Ok(o)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let o = overrides(&cli.global, &cli.command)?;
    let cfg = RunConfig::resolve(cli.global.config.as_deref(), &o)?;
    match &cli.command {
        Command::Train { resume } => train::run(&cfg, resume.as_deref()),
        Command::Generate {
            checkpoint,
            normalization,
            allow_untrained,
            ..
        } => generate::run(&cfg, checkpoint, normalization.as_deref(), *allow_untrained),
        Command::Eval {
            synthetic, embedder, ..
        } => eval::run(&cfg, synthetic, embedder.as_deref()),
        Command::Ablate => ablate::run(&cfg),
        Command::TrainEmbedder => eval::train_embedder(&cfg),
        Command::Toy { output, .. } => dataset::write_toy(&cfg, output),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
