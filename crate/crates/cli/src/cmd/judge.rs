use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use tritonjudge_core::exec::{judge_batch, JudgeError, JudgeJob};
use tritonjudge_core::lint::{lint, LintConfig, LintVerdict};
use tritonjudge_core::reward::{group_advantages, reward, RewardRecord, DEFAULT_STD_FLOOR};
use tritonjudge_core::{Channel, ExecVerdict, KernelTask, SourceUnit};

use super::lint::Level;
use crate::backend::{judge_options, BackendArgs, BackendFactory};
use crate::io::{input_err, output, read_json, read_jsonl, write_line, CmdResult, Failure, ResultExt};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// KernelTask JSON file
    #[arg(long)]
    pub task: PathBuf,
    /// JSONL of `{candidate_id, source, group?}`
    #[arg(long)]
    pub candidates: PathBuf,
    /// Append group-normalized advantages; candidates group by `group`, else all together
    #[arg(long)]
    pub grpo: bool,
    #[arg(long, default_value_t = DEFAULT_STD_FLOOR)]
    pub std_floor: f64,
    /// Lint strictness; entry names come from the task
    #[arg(long, value_enum, default_value = "l2")]
    pub strictness: Level,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateLine {
    pub candidate_id: String,
    pub source: String,
    #[serde(default)]
    pub group: Option<String>,
}

/// One judged candidate. `score` accepts these lines directly.
#[derive(Debug, Serialize, Deserialize)]
pub struct JudgeLine {
    pub task_id: String,
    pub channel: Channel,
    pub candidate_id: String,
    pub exec: ExecVerdict,
    pub lint: LintVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lint_error: Option<String>,
    pub reward: RewardRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}

fn unparsable_verdict() -> LintVerdict {
    LintVerdict {
        keyword_hit: false,
        jit_kernels: Vec::new(),
        reachable_kernels: Vec::new(),
        flags: Default::default(),
        is_triton: false,
    }
}

fn judge_failure(task_id: &str, candidate_id: &str, e: JudgeError) -> Failure {
    let err = anyhow!("task {task_id}, candidate {candidate_id}: {e}");
    match e {
        JudgeError::BackendUnavailable(_) | JudgeError::Protocol(_) => Failure::Infra(err),
        JudgeError::Task(_) | JudgeError::NoTrials | JudgeError::ReferenceFailed { .. } => Failure::Input(err),
    }
}

pub fn run(args: Args) -> CmdResult {
    let task: KernelTask = read_json(&args.task)?;
    task.validate().input()?;
    let candidates: Vec<CandidateLine> = read_jsonl(&args.candidates)?;
    if candidates.is_empty() {
        return Err(input_err(format!("{}: no candidates", args.candidates.display())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in &candidates {
        if !seen.insert(c.candidate_id.as_str()) {
            return Err(input_err(format!("duplicate candidate_id {}", c.candidate_id)));
        }
    }
    let factory = BackendFactory::from_args(&args.backend)?;
    let options = judge_options(&args.backend);

    let jobs: Vec<JudgeJob> = candidates
        .iter()
        .map(|c| JudgeJob {
            task: &task,
            candidate_id: c.candidate_id.clone(),
            candidate: SourceUnit::new(c.candidate_id.clone(), c.source.clone()),
        })
        .collect();
    let judged = judge_batch(&jobs, || factory.make(), args.backend.parallelism, &options);

    let by_id: BTreeMap<&str, &CandidateLine> = candidates.iter().map(|c| (c.candidate_id.as_str(), c)).collect();
    let mut lint_config = LintConfig::for_channel(task.channel, &task.entry_names);
    lint_config.strictness = args.strictness.into();
    let mut lines = Vec::with_capacity(judged.len());
    for j in judged {
        let exec = j.verdict.map_err(|e| judge_failure(&j.task_id, &j.candidate_id, e))?;
        let cand = by_id[j.candidate_id.as_str()];
        let unit = SourceUnit::new(cand.candidate_id.clone(), cand.source.clone());
        let (lint_verdict, lint_error) = match lint(&unit, &lint_config) {
            Ok(v) => (v, None),
            Err(e) => (unparsable_verdict(), Some(e.to_string())),
        };
        lines.push(JudgeLine {
            task_id: j.task_id,
            channel: task.channel,
            reward: reward(&j.candidate_id, &lint_verdict, &exec),
            candidate_id: j.candidate_id,
            exec,
            lint: lint_verdict,
            lint_error,
            group: cand.group.clone(),
            advantage: None,
        });
    }

    if args.grpo {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, l) in lines.iter().enumerate() {
            groups
                .entry(l.group.clone().unwrap_or_else(|| l.task_id.clone()))
                .or_default()
                .push(i);
        }
        for (name, members) in groups {
            let rewards: Vec<f64> = members.iter().map(|&i| lines[i].reward.r).collect();
            let adv =
                group_advantages(&rewards, args.std_floor).map_err(|e| input_err(format!("group {name}: {e}")))?;
            for (&i, a) in members.iter().zip(adv) {
                lines[i].advantage = Some(a);
            }
        }
    }

    let mut out = output(args.out.as_ref())?;
    for l in &lines {
        write_line(&mut out, l)?;
    }
    out.flush().input()
}
