use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Adventurer causal image model: checks, benchmarks and toy training.
#[derive(Debug, Parser)]
#[command(name = "adventurer", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat key=value model config; defaults to the micro preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for CSV, JSON and checkpoint outputs.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant and oracle suites.
    Verify {
        /// Only run these suites (comma separated or repeated).
        #[arg(long, value_delimiter = ',')]
        suite: Vec<String>,
        /// Deliberately break a behaviour to exercise the suites.
        #[arg(long, value_name = "FAULT")]
        inject_fault: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Time token mixers across sequence lengths.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "mamba2,causal-attn,full-attn")]
        mixers: Vec<String>,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        /// Runs per length; the first two are discarded.
        #[arg(long, default_value_t = 7)]
        repeats: usize,
        /// Longest sequence allowed.
        #[arg(long, default_value_t = 4096)]
        max_len: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on the synthetic grating set.
    TrainToy {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.02)]
        lr: f32,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Number of images in the dataset.
        #[arg(long, default_value_t = 128)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per combination of ablation axes.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "heading,flip")]
        axes: Vec<String>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.02)]
        lr: f32,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 128)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Print the parameter count of a preset or the resolved config.
    Params {
        #[arg(value_name = "PRESET")]
        name: Option<String>,
        #[arg(long, conflicts_with = "name")]
        preset: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Describe a checkpoint, or the layout of the resolved config.
    Inspect {
        #[arg(value_name = "CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rerun the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory for the rerun; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
