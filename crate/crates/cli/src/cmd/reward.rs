use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;
use tritonjudge_core::reward::{
    group_record, GrpoConfig, KlEstimator, RolloutGroup, DEFAULT_CLIP_EPS, DEFAULT_KL_BETA, DEFAULT_STD_FLOOR,
};

use crate::io::{output, read_jsonl, write_line, CmdResult, ResultExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kl {
    NonNegative,
    LogRatio,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSONL of `{prompt_id, rewards, token_scores?}`
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLIP_EPS)]
    pub clip_eps: f64,
    #[arg(long, default_value_t = DEFAULT_KL_BETA)]
    pub kl_beta: f64,
    #[arg(long, default_value_t = DEFAULT_STD_FLOOR)]
    pub std_floor: f64,
    #[arg(long, value_enum, default_value = "non-negative")]
    pub kl_estimator: Kl,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub fn run(args: Args) -> CmdResult {
    let config = GrpoConfig {
        clip_eps: args.clip_eps,
        kl_beta: args.kl_beta,
        std_floor: args.std_floor,
        kl_estimator: match args.kl_estimator {
            Kl::NonNegative => KlEstimator::NonNegative,
            Kl::LogRatio => KlEstimator::LogRatio,
        },
    };
    config.validate().input()?;
    let groups: Vec<RolloutGroup> = read_jsonl(&args.groups)?;
    let mut out = output(args.out.as_ref())?;
    for (i, g) in groups.iter().enumerate() {
        let record = group_record(g, &config)
            .with_context(|| format!("group {} ({})", i + 1, g.prompt_id))
            .input()?;
        write_line(&mut out, &record)?;
    }
    out.flush().input()
}
