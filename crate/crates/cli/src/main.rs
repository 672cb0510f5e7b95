//! Command-line front end: dataset synthesis, two-stage training,
//! evaluation, ablation sweeps, and gate/selection diagnostics. One TOML
//! config drives everything; flags override file keys; each command copies
//! the merged config into its output directory.

mod ablate;
mod config;
mod error;
mod eval;
mod inspect;
mod plot;
mod synth;
mod train;

use adaptdet_core::config::FusionMode;
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "adaptdet",
    version,
    about = "Domain-adaptive detector: synthesize data, train, evaluate, inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionModeArg {
    Gated,
    Average,
    Conv1x1,
    Off,
}

impl From<FusionModeArg> for FusionMode {
    fn from(v: FusionModeArg) -> FusionMode {
        match v {
            FusionModeArg::Gated => FusionMode::Gated,
            FusionModeArg::Average => FusionMode::Average,
            FusionModeArg::Conv1x1 => FusionMode::Conv1x1,
            FusionModeArg::Off => FusionMode::Off,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Run-config TOML; missing keys take built-in defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (ADAPTDET_OUTPUT_ROOT prefixes it when set).
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Override the training and synthesis seeds together.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelSwitches {
    /// Fusion mode for merged features.
    #[arg(long, value_enum)]
    fusion_mode: Option<FusionModeArg>,
    /// Shorthand for --fusion-mode off.
    #[arg(long, conflicts_with = "fusion_mode")]
    disable_gated_fusion: bool,
    /// Keep the category-level discriminator off in stage two.
    #[arg(long)]
    disable_category: bool,
}

#[derive(Args)]
struct TrainOverrides {
    /// Adversarial loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Iterations before the category discriminator switches on.
    #[arg(long)]
    stage1_iters: Option<usize>,
    /// Iterations with the category discriminator active.
    #[arg(long)]
    stage2_iters: Option<usize>,
    /// Periodic checkpoint interval; 0 keeps only the final checkpoint.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic source/target train/eval splits to disk.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Images per training split.
        #[arg(long)]
        n_train: Option<usize>,
        /// Images per evaluation split.
        #[arg(long)]
        n_eval: Option<usize>,
    },
    /// Train both stages, writing metrics, checkpoints, and loss curves.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        switches: ModelSwitches,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; defaults to <output>/final.ckpt.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Dataset split to evaluate.
        #[arg(long)]
        split: Option<String>,
        /// Re-validate the AP implementation against the exhaustive oracle.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Write gate heatmaps and the category-selection overlay for one image.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; defaults to <output>/final.ckpt.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// A PNG to inspect; defaults to an image from --split/--index.
        #[arg(long, value_name = "FILE")]
        image: Option<PathBuf>,
        /// Dataset split to pull the image from.
        #[arg(long)]
        split: Option<String>,
        /// Image index within the split.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Train and evaluate the fusion/discriminator variant matrix.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Comma-separated variant subset; default runs all six.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
}

/// Load the config file (if any) and apply the shared overrides. Returns
/// whether the model architecture was pinned by file or flag.
fn load_config(common: &Common) -> Result<(RunConfig, bool), CliError> {
    let (mut cfg, model_pinned) = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => (RunConfig::default(), false),
    };
    if let Some(out) = &common.output {
        cfg.output = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.synth.render.seed = seed;
    }
    Ok((cfg, model_pinned))
}

fn apply_switches(cfg: &mut RunConfig, sw: &ModelSwitches) -> bool {
    let mut pinned = false;
    if let Some(mode) = sw.fusion_mode {
        cfg.model.fusion = mode.into();
        pinned = true;
    }
    if sw.disable_gated_fusion {
        cfg.model.fusion = FusionMode::Off;
        pinned = true;
    }
    if sw.disable_category {
        cfg.train.disable_category = true;
    }
    pinned
}

fn apply_train_overrides(cfg: &mut RunConfig, ov: &TrainOverrides) {
    if let Some(alpha) = ov.alpha {
        cfg.train.alpha = alpha;
    }
    if let Some(n) = ov.stage1_iters {
        cfg.train.stage1_iters = n;
    }
    if let Some(n) = ov.stage2_iters {
        cfg.train.stage2_iters = n;
    }
    if let Some(n) = ov.checkpoint_every {
        cfg.checkpoint_every = n;
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { common, n_train, n_eval } => {
            let (mut cfg, _) = load_config(&common)?;
            if let Some(n) = n_train {
                cfg.synth.n_train = n;
            }
            if let Some(n) = n_eval {
                cfg.synth.n_eval = n;
            }
            synth::run(&cfg)
        }
        Command::Train { common, switches, overrides } => {
            let (mut cfg, _) = load_config(&common)?;
            apply_switches(&mut cfg, &switches);
            apply_train_overrides(&mut cfg, &overrides);
            train::run(&cfg).map(|_| ())
        }
        Command::Eval { common, checkpoint, split, oracle_check } => {
            let (mut cfg, model_pinned) = load_config(&common)?;
            if let Some(split) = split {
                cfg.eval.split = split;
            }
            let ckpt = checkpoint.unwrap_or_else(|| cfg.resolved_output().join("final.ckpt"));
            eval::run(&cfg, &ckpt, oracle_check, model_pinned).map(|_| ())
        }
        Command::Inspect { common, checkpoint, image, split, index } => {
            let (cfg, _) = load_config(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.resolved_output().join("final.ckpt"));
            let source = match image {
                Some(path) => inspect::ImageSource::File(path),
                None => inspect::ImageSource::Split {
                    split: split.unwrap_or_else(|| cfg.eval.split.clone()),
                    index,
                },
            };
            inspect::run(&cfg, &ckpt, &source)
        }
        Command::Ablate { common, overrides, variants } => {
            let (mut cfg, _) = load_config(&common)?;
            apply_train_overrides(&mut cfg, &overrides);
            ablate::run(&cfg, &variants)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            ExitCode::FAILURE
        }
    }
}
