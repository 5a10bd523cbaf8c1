mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hiest::config::KeyValues;
use hiest::model::AdjNorm;
use hiest::training::AgRefresh;
use hiest::Error;

use run_config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "hiest", version, about = "Hierarchical spatio-temporal traffic forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the regional hierarchy of a sensor network.
    Hierarchy(HierarchyArgs),
    /// Generate a synthetic dataset with a planted hierarchy.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Train over a grid of eta4 and n_global values.
    Grid(GridArgs),
}

#[derive(Args, Debug)]
struct HierarchyArgs {
    /// Distances CSV (from_id,to_id,distance_m)
    #[arg(long)]
    distances: PathBuf,
    /// Gaussian kernel weights below this are dropped
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Output directory for mapping.txt and summary.txt [default: none, print only]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 5)]
    nodes_per_region: usize,
    #[arg(long, default_value_t = 2)]
    patterns: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the additive noise
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Sources for the effective run configuration, lowest priority first:
/// built-in defaults, checkpoint header, config file, flags.
#[derive(Args, Debug, Clone, Default)]
struct Sources {
    /// Key-value config file [default: none]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding readings.csv and distances.csv [default: none]
    #[arg(long)]
    data: Option<PathBuf>,
}

macro_rules! settings {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty ),* $(,)?) => {
        /// Flags that override individual run settings.
        #[derive(Args, Debug, Clone, Default)]
        struct Settings {
            $( $(#[doc = $doc])* #[arg(long)] $field: Option<$ty>, )*
        }

        impl Settings {
            fn overrides(&self) -> KeyValues {
                let mut kv = KeyValues::new();
                $( if let Some(v) = &self.$field {
                    kv.set(stringify!($field), v);
                } )*
                kv
            }

            fn ids() -> &'static [&'static str] {
                &[$( stringify!($field) ),*]
            }
        }
    };
}

settings! {
    /// Readings CSV
    readings: String,
    /// Distances CSV
    distances: String,
    /// Gaussian kernel threshold
    threshold: f64,
    train_ratio: f64,
    val_ratio: f64,
    test_ratio: f64,
    /// Add a time-of-day input channel
    time_of_day: bool,
    /// Treat exact zero readings as missing
    zero_is_missing: bool,
    blocks: usize,
    layers_per_block: usize,
    /// Hidden width
    hidden: usize,
    /// Number of global nodes
    n_global: usize,
    /// Regional to local enhance weight
    eta1: f64,
    /// Global to regional enhance weight
    eta2: f64,
    /// Local to regional update weight
    eta3: f64,
    /// Regional to global update weight
    eta4: f64,
    /// Input steps
    history: usize,
    /// Predicted steps
    horizon: usize,
    tcn_kernel: usize,
    skip_dim: usize,
    /// Adjacency normalization: rownorm or raw
    adj_norm: AdjNorm,
    lr: f64,
    weight_decay: f64,
    /// Global gradient norm clip
    clip_norm: f64,
    batch_size: usize,
    max_epochs: usize,
    /// Epochs without validation improvement before stopping (0 disables)
    patience: usize,
    seed: u64,
    /// Weight of the prediction loss
    w_pre: f64,
    /// Weight of the regional reconstruction loss
    w_rec_ro: f64,
    /// Weight of the global reconstruction loss
    w_rec_gr: f64,
    /// Weight of the orthogonality loss
    w_ort: f64,
    /// Global adjacency refresh: step or epoch
    ag_refresh: AgRefresh,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    sources: Sources,
    #[command(flatten)]
    settings: Settings,
    /// Continue from a checkpoint written by train [default: none]
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory for logs and checkpoints
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by train
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding readings.csv and distances.csv [default: paths stored in the checkpoint]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Readings CSV [default: path stored in the checkpoint]
    #[arg(long)]
    readings: Option<PathBuf>,
    /// Distances CSV [default: path stored in the checkpoint]
    #[arg(long)]
    distances: Option<PathBuf>,
    /// Split to score: train, val or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Score the last parameters instead of the best ones
    #[arg(long)]
    last: bool,
    /// Also report the last-value persistence baseline
    #[arg(long)]
    baseline: bool,
    /// Metrics CSV [default: eval_<split>.csv next to the checkpoint]
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Central difference step
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Seed of the toy model
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    sources: Sources,
    #[command(flatten)]
    settings: Settings,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,0.8,1")]
    eta4_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "10,15,20,25")]
    n_global_values: Vec<usize>,
    /// Output directory for grid.csv
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Lib(Error),
    /// Completed, but a check did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Check(_) => "check_failed",
            Failure::Lib(e) => match e {
                Error::Dimension { .. } | Error::Axis { .. } | Error::Rank { .. } => "dimension",
                Error::InsufficientLength { .. } => "insufficient_length",
                Error::InvalidTensor(_) => "invalid_tensor",
                Error::DegenerateKernel(_) => "degenerate_kernel",
                Error::Construction(_) => "construction",
                Error::Format { .. } => "format",
                Error::Size(_) => "size",
                Error::DegenerateFeature(_) => "degenerate_feature",
                Error::NonFiniteGradient(_) => "non_finite_gradient",
                Error::NonFiniteLoss { .. } => "non_finite_loss",
                Error::Layer { .. } => "layer",
                Error::Config(_) => "config",
                Error::Checkpoint(_) => "checkpoint",
                Error::Io(_) => "io",
                Error::Json(_) => "json",
            },
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) => 1,
            Failure::Lib(e) => match e {
                Error::Format { .. } | Error::Config(_) | Error::Checkpoint(_) | Error::Json(_) => 2,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Check(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

/// Appends each setting's default to its help text, so `--help` shows the
/// values a run starts from.
fn command_with_defaults() -> clap::Command {
    let defaults = RunConfig::default().to_kv();
    let mut cmd = Cli::command();
    for sub in ["train", "grid"] {
        cmd = cmd.mut_subcommand(sub, |mut s| {
            for id in Settings::ids() {
                let shown = defaults.get(id).unwrap_or("none").to_string();
                s = s.mut_arg(*id, |a| {
                    let help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
                    a.help(format!("{help} [default: {shown}]").trim_start().to_string())
                });
            }
            s
        });
    }
    cmd
}

fn main() -> ExitCode {
    let matches = match command_with_defaults().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            if !usage {
                return ExitCode::SUCCESS;
            }
            let msg = e.kind().to_string();
            eprintln!("error kind=usage exit=2 message={msg:?}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error kind=usage exit=2 message={:?}", e.to_string());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Hierarchy(a) => commands::hierarchy(&a.distances, a.threshold, a.out.as_deref()),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(a.tol, a.step, a.seed),
        Command::Grid(a) => commands::grid(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.exit_code();
            eprintln!("error: {}", f.message());
            eprintln!("error kind={} exit={code} message={:?}", f.kind(), f.message());
            if matches!(f, Failure::Usage(_)) {
                eprintln!("hint: run `hiest help` for usage");
            }
            ExitCode::from(code)
        }
    }
}
