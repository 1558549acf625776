use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracmag::runner::{run, Command, RunArgs, Stage, Suite};

#[derive(Parser)]
#[command(name = "fracmag", version, about = "Fractional magnetic parabolic solver, DtN simulation and inversion")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Time refinement level.
    #[arg(long)]
    level: Option<u32>,
    /// Seed overriding run.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward solve with the forward control.
    Forward(Common),
    /// Backward solve with the dual control.
    Dual(Common),
    /// Identity and estimate checks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Nested Runge approximation residuals.
    Runge(Common),
    /// Recovery of the potentials from simulated DtN data.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Stage::Full)]
        stage: Stage,
    },
    /// Rothe refinement study.
    Convergence(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, suite, stage) = match cli.command {
        Cmd::Forward(c) => (Command::Forward, c, Suite::All, Stage::Full),
        Cmd::Dual(c) => (Command::Dual, c, Suite::All, Stage::Full),
        Cmd::Verify { common, suite } => (Command::Verify, common, suite, Stage::Full),
        Cmd::Runge(c) => (Command::Runge, c, Suite::All, Stage::Full),
        Cmd::Invert { common, stage } => (Command::Invert, common, Suite::All, stage),
        Cmd::Convergence(c) => (Command::Convergence, c, Suite::All, Stage::Full),
    };
    let args = RunArgs { command, config: common.config, out: common.out, level: common.level, seed: common.seed, suite, stage };
    ExitCode::from(run(&args) as u8)
}
