//! `graspdict`: synthesize data, split it, train both phases, evaluate,
//! benchmark and sweep.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit code for bad input.
const EXIT_VALIDATION: u8 = 1;
/// Exit code for failures while running a valid request.
const EXIT_RUNTIME: u8 = 2;
/// Exit code for malformed command lines.
const EXIT_USAGE: u8 = 64;

/// Environment variable naming the directory that relative data paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "GRASPDICT_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "graspdict", version, about = "Semi-supervised 2D to 3D hand-object pose lifting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Training settings shared by every command that trains or reports.
/// Precedence: defaults, then `--config` file, then `--set`, then flags.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for the split and every initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds for repeated runs.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Number of dictionary atoms (autoencoder bottleneck width for `--kind ae`).
    #[arg(long)]
    pub k: Option<usize>,
    /// Fraction of frames labeled, sampled as 5-frame subsequences.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Weight of the reconstruction term in Phase II.
    #[arg(long)]
    pub lambda_r: Option<f64>,
    /// Weight of the atom validity term in Phase I.
    #[arg(long)]
    pub lambda_dict: Option<f64>,
    /// Phase I learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Phase II learning rate.
    #[arg(long)]
    pub est_lr: Option<f64>,
    /// Labeled mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dict_epochs: Option<usize>,
    #[arg(long)]
    pub est_epochs: Option<usize>,
    /// Worker threads for independent runs.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Dict,
    Ae,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GroupArg {
    Hand,
    Object,
    All,
    Wrist,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate procedural grasp sequences as JSONL.
    Synth {
        /// Number of sequences, one box and grasp each.
        #[arg(long)]
        sequences: usize,
        /// Frames per sequence.
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mark labeled subsequences; 3D poses of unlabeled frames are kept for evaluation.
    Split {
        /// Interchange JSONL file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase I: learn the pose dictionary (or an autoencoder) from the labeled frames.
    TrainDict {
        /// Interchange JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Dict)]
        kind: KindArg,
        /// Use the records' `labeled` flags instead of splitting by ratio.
        #[arg(long)]
        presplit: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Phase II: train the estimator against a frozen reconstruction module.
    TrainEst {
        /// Interchange JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// Phase I checkpoint file or directory; omit with `--lambda-r 0` for the
        /// supervised-only baseline.
        #[arg(long)]
        dict: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Records logged as validation after every epoch.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        presplit: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate an estimator checkpoint on annotated records.
    Eval {
        /// Estimator checkpoint file or directory.
        #[arg(long)]
        ckpt: PathBuf,
        /// Interchange JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// Directory for metrics.csv and pck.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Point group of the PCK curve.
        #[arg(long, value_enum, default_value_t = GroupArg::Hand)]
        pck_group: GroupArg,
    },
    /// Train and compare all methods over the configured seeds.
    Benchmark {
        /// Interchange JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// Annotated JSONL file for evaluation.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Also train on temporally interpolated pseudo-labels.
        #[arg(long)]
        pseudo: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train ours across values of one setting.
    Sweep {
        /// Interchange JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// Annotated JSONL file for evaluation.
        #[arg(long)]
        test: PathBuf,
        /// k, lambda_r or ratio.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Also train the supervised-only baseline at every value.
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write the cylindrical encoding of every 3D pose as CSV.
    Transform {
        /// Interchange JSONL file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every trainable loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
