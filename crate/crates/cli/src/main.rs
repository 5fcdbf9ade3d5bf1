use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "vmf", version, about = "Mean-field vortex equations: solve, continue, analyze, hamiltonian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at a single lambda.
    Solve(Common),
    /// Follow an ascending lambda ladder.
    Continue(Common),
    /// Blow-up diagnostics for a solution or continuation output.
    Analyze(Common),
    /// Kirchhoff Hamiltonian and its critical configurations.
    Hamiltonian(Common),
}

#[derive(Args)]
pub struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Continue(c) => ("continue", c),
        Command::Analyze(c) => ("analyze", c),
        Command::Hamiltonian(c) => ("hamiltonian", c),
    };
    let code = commands::run(name, &common.config, common.out.as_deref(), common.seed);
    ExitCode::from(code)
}
