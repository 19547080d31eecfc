use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ratiobench::cli::{main_with, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Train,
    EstimateRatio,
    Curves,
    Gradcheck,
    Benchmark,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Train => Command::Train,
            Cmd::EstimateRatio => Command::EstimateRatio,
            Cmd::Curves => Command::Curves,
            Cmd::Gradcheck => Command::Gradcheck,
            Cmd::Benchmark => Command::Benchmark,
        }
    }
}

/// Likelihood-free learning toolkit: density-ratio estimation, f-divergence
/// and scoring-rule losses, moment matching and bi-level training.
#[derive(Debug, Parser)]
#[command(name = "ratiobench", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Configuration file (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = main_with(args.command.into(), &args.config, args.out.as_deref(), args.seed);
    ExitCode::from(code as u8)
}
