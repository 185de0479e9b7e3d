mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "preclab", version, about = "Operator-precedence experiments on a toy transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enumerate the expression dataset as JSON lines.
    Gen(GenArgs),
    /// Train a model and save a checkpoint.
    Train(TrainArgs),
    /// Exact-match accuracy; writes the correctly answered subset.
    Eval(EvalArgs),
    /// Logit lens and intermediate-value detection.
    Lens(LensArgs),
    /// Ridge probe for the intermediate value, per layer and site.
    ProbeLinear(ProbeArgs),
    /// Logistic probe for operator evaluation order at operator tokens.
    ProbeLogistic(ProbeArgs),
    /// Zero each layer's attention output in turn.
    Ablate(EvalArgs),
    /// Partial operator-embedding swap: contributions and cumulative patch.
    Swap(SwapArgs),
    /// 2-D projection and cluster separation of layer-0 operator activations.
    Project(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: runs/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file.
    #[arg(long, default_value = "data.jsonl")]
    pub out: PathBuf,
    /// Filter policy name; see --filters.
    #[arg(long, default_value = "whole-nonnegative")]
    pub policy: String,
    /// Print the count under every filter interpretation.
    #[arg(long)]
    pub filters: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// TOML file with optional [model] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file (default: the generated dataset).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LensArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Single prompt, e.g. "3 + 4 * 5 = ". Without it every correctly
    /// answered prompt of --data is scanned.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, conflicts_with = "prompt")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict to one layer (default: every layer for the linear probe,
    /// layer 0 for the logistic probe).
    #[arg(long)]
    pub layer: Option<usize>,
    /// Linear probe position: final, operators or an absolute index.
    #[arg(long, default_value = "final")]
    pub position: String,
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Lens(a) => commands::lens(a),
        Command::ProbeLinear(a) => commands::probe_linear(a),
        Command::ProbeLogistic(a) => commands::probe_logistic(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Swap(a) => commands::swap(a),
        Command::Project(a) => commands::project(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
