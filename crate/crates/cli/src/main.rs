mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;
pub const EXIT_CORRUPT: u8 = 4;

/// Cross-embodiment locomotion pretraining for planar legged walkers.
#[derive(Debug, Parser)]
#[command(name = "strider", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Base seed. HZERO_SEED overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain one policy on every robot of a run config.
    Pretrain(PretrainArgs),
    /// Adapt a pretrained checkpoint to a new robot and fine-tune it.
    Finetune(FinetuneArgs),
    /// Deterministic evaluation with randomization off; prints a JSON summary.
    Eval(EvalArgs),
    /// Embodiment descriptors as CSV, one row per robot or variant.
    Descriptors(DescriptorArgs),
    /// Five-step state windows from successful rollouts as CSV.
    ExportFeatures(ExportArgs),
    /// Scratch versus pretrained fine-tuning at matched seeds and budgets.
    Compare(CompareArgs),
    /// Write a procedurally generated walker as a robot file.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Run config JSON. Defaults to the desk_scale preset.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in config: desk_scale or paper_scale.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override trainer.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override trainer.num_envs.
    #[arg(long)]
    pub num_envs: Option<usize>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub pretrained: PathBuf,
    #[arg(long)]
    pub robot: PathBuf,
    /// Zero evaluates the adapted policy without updating it.
    #[arg(long)]
    pub epochs: usize,
    /// Initial action standard deviation for the new robot.
    #[arg(long, default_value_t = 0.2)]
    pub init_std: f64,
    #[arg(long, default_value_t = strider_core::transfer::FINETUNE_LR)]
    pub lr: f64,
    /// Override trainer.num_envs.
    #[arg(long)]
    pub num_envs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub robot: PathBuf,
    /// Fraction of the command ranges.
    #[arg(long, default_value_t = 0.6)]
    pub command_scale: f64,
    /// Episodes per environment.
    #[arg(long, default_value_t = 4)]
    pub episodes: usize,
    #[arg(long)]
    pub envs: Option<usize>,
    /// Randomization is always off during evaluation; accepted for clarity.
    #[arg(long)]
    pub no_dr: bool,
    /// Write every step of every episode as CSV.
    #[arg(long)]
    pub dump_traj: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DescriptorArgs {
    /// Robot files.
    #[arg(long = "robot")]
    pub robots: Vec<PathBuf>,
    /// Also include every robot of this run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Randomized variants per robot instead of the nominal model.
    #[arg(long)]
    pub variants: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub dr_mult: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long = "robot", required = true)]
    pub robots: Vec<PathBuf>,
    /// Randomization multipliers to roll out under.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub dr_mult: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    pub envs: usize,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    #[arg(long, default_value_t = strider_core::eval::FEATURE_WINDOW)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub pretrained: PathBuf,
    #[arg(long)]
    pub robot: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0,100,500,1000")]
    pub scratch_budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,100,500,1000")]
    pub pretrained_budgets: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub init_std: f64,
    #[arg(long)]
    pub num_envs: Option<usize>,
    /// CSV destination (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Biped,
    QuadrupedPair,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = 3)]
    pub segments: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub leg_length_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mass_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gain_scale: f64,
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    /// Replace the generated name.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
