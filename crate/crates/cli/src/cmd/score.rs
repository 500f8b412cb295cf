use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::ValueEnum;
use serde::Deserialize;
use tritonjudge_core::metrics::{render_report, score, Attempt, ReportFormat, ScoreOptions, ScoreRequest, TaskResult};

use super::judge::JudgeLine;
use crate::io::{input_err, output, read_jsonl, CmdResult, ResultExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Md,
    Json,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSONL of task results, or the output of `judge`
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub p: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.75,0.5")]
    pub quantiles: Vec<f64>,
    #[arg(long, value_enum, default_value = "md")]
    pub format: Format,
    /// Count PASS as correct regardless of the lint verdict
    #[arg(long)]
    pub exec_only: bool,
    /// Leave incorrect tasks out of the speedup percentiles
    #[arg(long)]
    pub exclude_incorrect: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ResultLine {
    Task(TaskResult),
    Judged(Box<JudgeLine>),
}

/// Folds judged lines into per-task results, keeping first-seen task order
/// and input order of attempts.
fn collect(lines: Vec<ResultLine>) -> Vec<TaskResult> {
    let mut out: Vec<TaskResult> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for line in lines {
        match line {
            ResultLine::Task(t) => out.push(t),
            ResultLine::Judged(j) => {
                let j = *j;
                let slot = *index.entry(j.task_id.clone()).or_insert_with(|| {
                    out.push(TaskResult {
                        task_id: j.task_id.clone(),
                        channel: j.channel,
                        attempts: Vec::new(),
                    });
                    out.len() - 1
                });
                out[slot].attempts.push(Attempt {
                    candidate_id: j.candidate_id,
                    exec: j.exec,
                    lint: j.lint,
                });
            }
        }
    }
    out
}

pub fn run(args: Args) -> CmdResult {
    let lines: Vec<ResultLine> = read_jsonl(&args.results)?;
    if lines.is_empty() {
        return Err(input_err(format!("{}: no results", args.results.display())));
    }
    let results = collect(lines);
    let request = ScoreRequest {
        ps: args.p,
        k: args.k,
        quantiles: args.quantiles,
        options: ScoreOptions {
            exec_only: args.exec_only,
            exclude_incorrect: args.exclude_incorrect,
        },
    };
    let report = score(&results, &request).input()?;
    let format = match args.format {
        Format::Md => ReportFormat::Markdown,
        Format::Json => ReportFormat::Json,
    };
    let mut out = output(args.out.as_ref())?;
    let text = render_report(&report, format);
    out.write_all(text.as_bytes()).input()?;
    if !text.ends_with('\n') {
        writeln!(out).input()?;
    }
    out.flush().input()
}
