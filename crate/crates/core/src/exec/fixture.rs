//! In-process execution backend for tests and offline runs.
//!
//! Jobs are answered in this order:
//!
//! 1. a recorded transcript whose request matches the job (mode, source,
//!    entry and inputs; the job id and timeout are ignored);
//! 2. otherwise the micro-interpreter, steered by optional directives in the
//!    source's comments:
//!    - `# fixture-raise: compile|call|exec|timeout [message]`
//!    - `# fixture-eval: <expr>` replaces the entry body with `return <expr>`
//!    - `# fixture-cost-ns: <n>` pins the simulated run time
//!
//! Simulated time is the interpreter's element-operation count plus a fixed
//! launch overhead, so identical sources always time identically.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, Capabilities, ExecutionBackend};
use super::inputs::{generate_tensor, DEFAULT_ELEMENT_BUDGET};
use super::interp::{InterpError, Program};
use super::protocol::{JobMode, Stage, WorkerJob, WorkerReply};
use crate::lint::parse_source;
use crate::source::SourceUnit;

pub const LAUNCH_OVERHEAD_NS: u64 = 1_000;

/// One recorded request/reply pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: WorkerJob,
    pub reply: WorkerReply,
}

fn transcript_key(job: &WorkerJob) -> String {
    let inputs = serde_json::to_string(&job.inputs).unwrap_or_default();
    let mode = serde_json::to_string(&job.mode).unwrap_or_default();
    crate::util::sha256_hex(format!("{mode}\0{}\0{}\0{inputs}", job.source, job.entry).as_bytes())
}

#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    transcripts: HashMap<String, WorkerReply>,
    element_budget: usize,
    can_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Directive {
    Raise(Stage, String, bool),
    Eval(String),
    Cost(u64),
}

fn directives(source: &str) -> Vec<Directive> {
    let mut out = Vec::new();
    for line in source.lines() {
        let Some(pos) = line.find("# fixture-") else {
            continue;
        };
        let rest = &line[pos + "# fixture-".len()..];
        if let Some(arg) = rest.strip_prefix("raise:") {
            let mut parts = arg.trim().splitn(2, ' ');
            let kind = parts.next().unwrap_or("");
            let msg = parts.next().unwrap_or("raised by fixture").trim().to_string();
            let d = match kind {
                "compile" => Directive::Raise(Stage::Compile, msg, false),
                "call" => Directive::Raise(Stage::Call, msg, false),
                "exec" => Directive::Raise(Stage::Exec, msg, false),
                "timeout" => Directive::Raise(Stage::Exec, format!("timeout: {msg}"), true),
                _ => continue,
            };
            out.push(d);
        } else if let Some(arg) = rest.strip_prefix("eval:") {
            out.push(Directive::Eval(arg.trim().to_string()));
        } else if let Some(arg) = rest.strip_prefix("cost-ns:") {
            if let Ok(n) = arg.trim().parse() {
                out.push(Directive::Cost(n));
            }
        }
    }
    out
}

impl FixtureBackend {
    pub fn new() -> Self {
        Self {
            transcripts: HashMap::new(),
            element_budget: DEFAULT_ELEMENT_BUDGET,
            can_time: true,
        }
    }

    pub fn with_transcripts(mut self, entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        for e in entries {
            self.transcripts.insert(transcript_key(&e.request), e.reply);
        }
        self
    }

    /// Loads a JSON array of [`TranscriptEntry`].
    pub fn load_transcripts(self, path: &Path) -> Result<Self, BackendError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
        let entries: Vec<TranscriptEntry> =
            serde_json::from_str(&text).map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
        Ok(self.with_transcripts(entries))
    }

    pub fn without_timing(mut self) -> Self {
        self.can_time = false;
        self
    }

    pub fn with_element_budget(mut self, budget: usize) -> Self {
        self.element_budget = budget;
        self
    }

    fn has_capture(&self) -> bool {
        // captures can only come from transcripts
        !self.transcripts.is_empty() && self.transcripts.values().any(|r| r.capture.is_some())
    }

    fn interpret(&self, job: &WorkerJob) -> WorkerReply {
        let id = job.job_id.as_str();
        let ds = directives(&job.source);
        for d in &ds {
            if let Directive::Raise(stage, msg, _) = d {
                return WorkerReply::failure(id, *stage, msg.clone());
            }
        }
        if let Err(e) = parse_source(&SourceUnit::new("job", job.source.clone())) {
            return WorkerReply::failure(id, Stage::Compile, e.to_string());
        }
        let eval = ds.iter().find_map(|d| match d {
            Directive::Eval(e) => Some(e.as_str()),
            _ => None,
        });
        let program = match Program::from_source(&job.source, &job.entry, eval) {
            Ok(p) => p,
            Err(InterpError::Syntax(m)) => return WorkerReply::failure(id, Stage::Compile, m),
            Err(InterpError::Call(m)) => return WorkerReply::failure(id, Stage::Call, m),
            Err(InterpError::Exec(m)) => return WorkerReply::failure(id, Stage::Exec, m),
        };
        let mut inputs = Vec::with_capacity(job.inputs.len());
        for (i, input) in job.inputs.iter().enumerate() {
            let spec = input.spec();
            if spec.numel() > self.element_budget {
                return WorkerReply::failure(id, Stage::Exec, format!("input {i} exceeds the element budget"));
            }
            inputs.push(generate_tensor(&spec, input.seed, i));
        }
        let outcome = match program.run(&inputs) {
            Ok(o) => o,
            Err(InterpError::Call(m)) => return WorkerReply::failure(id, Stage::Call, m),
            Err(e) => return WorkerReply::failure(id, Stage::Exec, e.to_string()),
        };
        let pinned = ds.iter().find_map(|d| match d {
            Directive::Cost(n) => Some(*n),
            _ => None,
        });
        let mut reply = WorkerReply::success(id, outcome.outputs.iter().map(|t| t.encode()).collect());
        if job.mode == JobMode::Time {
            reply.outputs.clear();
            reply.time_ns = Some(pinned.unwrap_or(LAUNCH_OVERHEAD_NS + outcome.cost));
        }
        reply
    }
}

impl ExecutionBackend for FixtureBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_compile_capture: self.has_capture(),
            can_time: self.can_time,
        }
    }

    fn submit(&mut self, job: &WorkerJob) -> Result<WorkerReply, BackendError> {
        if let Some(recorded) = self.transcripts.get(&transcript_key(job)) {
            let mut reply = recorded.clone();
            reply.job_id = Some(job.job_id.clone());
            return Ok(reply);
        }
        Ok(match job.mode {
            JobMode::CompileCapture => WorkerReply::failure(&job.job_id, Stage::Compile, "capture-unsupported"),
            JobMode::Time if !self.can_time => WorkerReply::failure(&job.job_id, Stage::Exec, "timing-unsupported"),
            _ => self.interpret(job),
        })
    }
}
