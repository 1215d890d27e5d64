mod commands;
mod config;
mod viz;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "grunet",
    about = "Text-conditioned MultiResUNet-style nuclei segmentation",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Shared config plumbing for the dataset-driven subcommands.
#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Flat key=value overrides, repeatable (e.g. --set variant=full).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override both the model and training seeds.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn build(&self) -> grunet_core::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        for kv in &self.set {
            cfg.apply_set(kv)?;
        }
        cfg.finish(self.seed);
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and write checkpoints, a JSONL record and the split
    /// manifest to the output dir.
    Train(RunArgs),
    /// Evaluate a checkpoint on one split of the configured dataset.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file written by train or ablate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to score: train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run inference on one image; writes a 16-bit probability PNG and a
    /// thresholded binary mask PNG.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory for the two PNGs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all four ablation variants and write the comparison CSV.
    Ablate(RunArgs),
    /// Export per-stage activation heatmaps (plus raw arrays) for one image.
    Heatmaps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory for the PNG/JSON panels.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic blob dataset in the standard directory layout.
    GenSynthetic {
        /// Number of samples.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// GRUNET_OUT overrides the output dir of every subcommand.
fn out_override(out: PathBuf) -> PathBuf {
    match std::env::var("GRUNET_OUT") {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => out,
    }
}

fn run(cli: Cli) -> grunet_core::Result<()> {
    match cli.cmd {
        Cmd::Train(args) => commands::cmd_train(&args.build()?),
        Cmd::Eval {
            run,
            checkpoint,
            split,
        } => commands::cmd_eval(&run.build()?, &checkpoint, &split),
        Cmd::Predict {
            checkpoint,
            image,
            out,
        } => commands::cmd_predict(&checkpoint, &image, &out_override(out)),
        Cmd::Ablate(args) => commands::cmd_ablate(&args.build()?),
        Cmd::Heatmaps {
            checkpoint,
            image,
            out,
        } => commands::cmd_heatmaps(&checkpoint, &image, &out_override(out)),
        Cmd::GenSynthetic { n, size, seed, out } => {
            commands::cmd_gen_synthetic(n, size, seed, &out_override(out))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_config() { 2 } else { 1 });
    }
}
