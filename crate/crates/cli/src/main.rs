//! `tritonjudge`: lint, judge, reward, score and curate Triton kernels.
//!
//! Exit status: 0 on success, 2 on bad input, 3 when the execution backend
//! or LLM endpoint is unavailable. Verdict contents never change the status.

mod backend;
mod cmd;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tritonjudge_core::exec::PROTOCOL_VERSION;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "tritonjudge",
    about = "Evaluation and reward harness for generated Triton kernels"
)]
#[command(disable_version_flag = true)]
struct Cli {
    /// Print version and worker protocol version
    #[arg(long, short = 'V')]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether sources are Triton code and flag reward hacks
    Lint(cmd::lint::Args),
    /// Judge candidates against a task's reference
    Judge(cmd::judge::Args),
    /// Group-normalized advantages and GRPO objective for rollout groups
    Reward(cmd::reward::Args),
    /// Benchmark metrics report from judged results
    Score(cmd::score::Args),
    /// Curate SFT and RL datasets from host-tensor kernels
    Pipeline(cmd::pipeline::Args),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.version {
        println!("tritonjudge {VERSION} (worker protocol v{PROTOCOL_VERSION})");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (try --help)");
        return ExitCode::from(2);
    };
    let result = match command {
        Command::Lint(a) => cmd::lint::run(a),
        Command::Judge(a) => cmd::judge::run(a),
        Command::Reward(a) => cmd::reward::run(a),
        Command::Score(a) => cmd::score::run(a),
        Command::Pipeline(a) => cmd::pipeline::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
