use serde::{Deserialize, Serialize};

use super::llm::LlmClient;
use super::manifest::SourceRecord;
use super::{prompts, PipelineError};
use crate::exec::{
    judge, BackendError, Channel, ExecStatus, ExecutionBackend, JobInput, JobMode, JudgeOptions, KernelTask,
    ReferenceKind, TensorSpec, TestCase, WorkerJob, DEFAULT_ATOL, DEFAULT_ELEMENT_BUDGET, DEFAULT_RTOL,
};
use crate::lint::{lint, LintConfig, Strictness};
use crate::source::SourceUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Route {
    Distill,
    CompileRefine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TritonDraft {
    pub record_id: String,
    pub route: Route,
    pub triton_source: SourceUnit,
    pub cot: String,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ExecStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_triton: Option<bool>,
}

/// A fenced block: ```` ```lang ```` up to the next line starting with ```` ``` ````.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Fence {
    start: usize,
    end: usize,
    body: String,
}

fn fences(text: &str) -> Vec<Fence> {
    let mut out = Vec::new();
    let mut open: Option<(usize, String)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let is_fence = line.trim_start().starts_with("```");
        match (&mut open, is_fence) {
            (None, true) => open = Some((offset, String::new())),
            (Some((start, body)), true) => {
                out.push(Fence {
                    start: *start,
                    end: offset + line.len(),
                    body: std::mem::take(body),
                });
                open = None;
            }
            (Some((_, body)), false) => body.push_str(line),
            (None, false) => {}
        }
        offset += line.len();
    }
    out
}

/// Splits a completion into (reasoning, code): the code is the last fenced
/// block, the reasoning is the text before it with earlier blocks removed.
pub fn extract_code(reply: &str) -> Option<(String, String)> {
    let blocks = fences(reply);
    let last = blocks.last()?;
    let mut cot = String::new();
    let mut pos = 0;
    for b in &blocks[..blocks.len() - 1] {
        cot.push_str(&reply[pos..b.start]);
        pos = b.end;
    }
    cot.push_str(&reply[pos..last.start]);
    let cot = cot.lines().map(str::trim_end).collect::<Vec<_>>().join("\n");
    let code = last.body.trim_end().to_string() + "\n";
    if code.trim().is_empty() {
        return None;
    }
    Some((cot.trim().to_string(), code))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseGenOptions {
    pub cases: usize,
    pub max_attempts: usize,
    pub element_budget: usize,
}

impl Default for CaseGenOptions {
    fn default() -> Self {
        Self {
            cases: 3,
            max_attempts: 3,
            element_budget: DEFAULT_ELEMENT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCases {
    pub cases: Vec<TestCase>,
    pub diagnostics: Vec<String>,
}

#[derive(Deserialize)]
struct CaseReply {
    #[serde(default)]
    seed: Option<u64>,
    inputs: Vec<TensorSpec>,
    #[serde(default)]
    rtol: Option<f64>,
    #[serde(default)]
    atol: Option<f64>,
}

fn parse_cases(reply: &str) -> Result<Vec<CaseReply>, String> {
    let body = match extract_code(reply) {
        Some((_, code)) => code,
        None => reply.to_string(),
    };
    let cases: Vec<CaseReply> = serde_json::from_str(body.trim()).map_err(|e| e.to_string())?;
    if cases.is_empty() {
        return Err("empty case list".into());
    }
    for c in &cases {
        let (r, a) = (c.rtol.unwrap_or(DEFAULT_RTOL), c.atol.unwrap_or(DEFAULT_ATOL));
        if !(r >= 0.0 && a >= 0.0) {
            return Err(format!("negative tolerance ({r}, {a})"));
        }
    }
    Ok(cases)
}

/// Halves the largest dimension until the tensor fits in `budget` elements.
fn clamp_shape(shape: &mut [usize], budget: usize) -> bool {
    let mut changed = false;
    while shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .is_none_or(|n| n > budget.max(1))
    {
        let Some(big) = shape.iter_mut().max() else { break };
        if *big <= 1 {
            break;
        }
        *big /= 2;
        changed = true;
    }
    changed
}

/// Asks the model for test inputs, retrying unparseable replies.
pub fn gen_test_cases(
    record: &SourceRecord,
    llm: &dyn LlmClient,
    options: &CaseGenOptions,
) -> Result<GeneratedCases, PipelineError> {
    let prompt = prompts::test_cases(record, options.cases);
    let mut diagnostics = Vec::new();
    for attempt in 1..=options.max_attempts.max(1) {
        let reply = llm.complete(&prompt)?;
        let parsed = match parse_cases(&reply) {
            Ok(p) => p,
            Err(e) => {
                diagnostics.push(format!("attempt {attempt}: unparseable reply: {e}"));
                continue;
            }
        };
        let mut cases = Vec::with_capacity(parsed.len());
        for (i, c) in parsed.into_iter().enumerate() {
            let case_id = format!("c{i}");
            let mut inputs = c.inputs;
            for (j, spec) in inputs.iter_mut().enumerate() {
                let before = spec.shape.clone();
                if clamp_shape(&mut spec.shape, options.element_budget) {
                    diagnostics.push(format!(
                        "{case_id} input {j}: shape {before:?} clamped to {:?}",
                        spec.shape
                    ));
                }
            }
            cases.push(
                TestCase::new(case_id, c.seed.unwrap_or(i as u64 + 1), inputs)
                    .with_tolerance(c.rtol.unwrap_or(DEFAULT_RTOL), c.atol.unwrap_or(DEFAULT_ATOL)),
            );
        }
        return Ok(GeneratedCases { cases, diagnostics });
    }
    Err(PipelineError::AllRepliesUnparseable {
        record_id: record.record_id.clone(),
        attempts: options.max_attempts.max(1),
        diagnostics,
    })
}

fn backend_error(e: BackendError) -> PipelineError {
    PipelineError::Backend(e.to_string())
}

/// Runs the host source on every case; `validated` records whether all succeeded.
pub fn validate_reference<B: ExecutionBackend + ?Sized>(
    record: &SourceRecord,
    backend: &mut B,
    timeout_s: f64,
) -> Result<SourceRecord, PipelineError> {
    if record.test_cases.is_empty() {
        return Err(PipelineError::NoTestCases(record.record_id.clone()));
    }
    let mut out = record.clone();
    let mut ok = true;
    for case in &record.test_cases {
        let job = WorkerJob::new(
            format!("{}-ref-{}", record.record_id, case.case_id),
            JobMode::RunReference,
            &record.host_source.raw_text,
            &record.entry,
            JobInput::from_case(case),
            timeout_s,
        );
        let failure = match backend.submit(&job) {
            Ok(r) if r.ok => None,
            Ok(r) => Some(format!("{:?}: {}", r.stage, r.error.unwrap_or_default())),
            Err(BackendError::Timeout(t)) => Some(format!("timeout after {t}s")),
            Err(e) => return Err(backend_error(e)),
        };
        if let Some(msg) = failure {
            ok = false;
            out.diagnostics
                .push(format!("reference failed on {}: {msg}", case.case_id));
        }
    }
    out.validated = ok;
    Ok(out)
}

fn require_validated(record: &SourceRecord) -> Result<(), PipelineError> {
    if record.validated {
        Ok(())
    } else {
        Err(PipelineError::NotValidated(record.record_id.clone()))
    }
}

fn draft(record: &SourceRecord, route: Route, code: String, cot: String) -> TritonDraft {
    let origin = match route {
        Route::Distill => "distill",
        Route::CompileRefine => "compile_refine",
    };
    TritonDraft {
        record_id: record.record_id.clone(),
        route,
        triton_source: SourceUnit::new(format!("{}/{origin}", record.record_id), code),
        cot,
        verified: false,
        status: None,
        is_triton: None,
    }
}

pub fn distill_route(record: &SourceRecord, llm: &dyn LlmClient) -> Result<TritonDraft, PipelineError> {
    require_validated(record)?;
    let reply = llm.complete(&prompts::distill(record))?;
    let (cot, code) = extract_code(&reply).ok_or_else(|| PipelineError::NoCodeBlock(record.record_id.clone()))?;
    Ok(draft(record, Route::Distill, code, cot))
}

/// Captures the compiler's generated kernel through the backend, has the
/// model rewrite it for readability, then narrates the reasoning.
pub fn compile_refine_route<B: ExecutionBackend + ?Sized>(
    record: &SourceRecord,
    backend: &mut B,
    llm: &dyn LlmClient,
    timeout_s: f64,
) -> Result<TritonDraft, PipelineError> {
    require_validated(record)?;
    if !backend.capabilities().can_compile_capture {
        return Err(PipelineError::CaptureUnsupported(record.record_id.clone()));
    }
    let inputs = record.test_cases.first().map(JobInput::from_case).unwrap_or_default();
    let job = WorkerJob::new(
        format!("{}-capture", record.record_id),
        JobMode::CompileCapture,
        &record.host_source.raw_text,
        &record.entry,
        inputs,
        timeout_s,
    );
    let reply = backend.submit(&job).map_err(backend_error)?;
    let capture = match (reply.ok, reply.capture) {
        (true, Some(c)) if !c.trim().is_empty() => c,
        (_, _) if reply.error.as_deref() == Some("capture-unsupported") || reply.ok => {
            return Err(PipelineError::CaptureUnsupported(record.record_id.clone()))
        }
        _ => {
            return Err(PipelineError::CaptureFailed {
                record_id: record.record_id.clone(),
                message: reply.error.unwrap_or_default(),
            })
        }
    };
    let refined = llm.complete(&prompts::refine(record, &capture))?;
    let (_, code) = extract_code(&refined).ok_or_else(|| PipelineError::NoCodeBlock(record.record_id.clone()))?;
    let narration = llm.complete(&prompts::narrate(record, &code))?;
    // the narration is prose; drop any stray code it contains
    let cot = match extract_code(&narration) {
        Some((before, _)) if !before.is_empty() => before,
        _ => narration.trim().to_string(),
    };
    Ok(draft(record, Route::CompileRefine, code, cot))
}

/// The record as a judging task, with the host source as reference.
pub fn record_task(record: &SourceRecord) -> KernelTask {
    KernelTask {
        task_id: record.record_id.clone(),
        instruction: prompts::instruction(record),
        reference_source: record.host_source.clone(),
        reference_kind: ReferenceKind::HostTensor,
        test_cases: record.test_cases.clone(),
        channel: Channel::Custom,
        entry_names: vec![record.entry.clone()],
    }
}

/// `verified` iff the draft passes every case and is reachable Triton code.
pub fn cross_validate<B: ExecutionBackend + ?Sized>(
    draft: &TritonDraft,
    record: &SourceRecord,
    backend: &mut B,
    options: &JudgeOptions,
) -> Result<TritonDraft, PipelineError> {
    require_validated(record)?;
    let verdict = judge(&record_task(record), &draft.triton_source, backend, options)?;
    let config = LintConfig::new(Strictness::Reachable, vec![record.entry.clone()]);
    let is_triton = lint(&draft.triton_source, &config)
        .map(|v| v.is_triton)
        .unwrap_or(false);
    let mut out = draft.clone();
    out.status = Some(verdict.status);
    out.is_triton = Some(is_triton);
    out.verified = verdict.status == ExecStatus::Pass && is_triton;
    Ok(out)
}
