//! Dataset curation: ingest host-tensor kernels, generate and validate test
//! cases, draft Triton versions through two routes, keep only drafts that
//! are equivalent and lint-clean, then write SFT and RL datasets.

mod emit;
mod llm;
mod manifest;
pub mod prompts;
mod stages;

use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emit::{
    emit_datasets, interleave, sft_response, Datasets, DistributionTag, RlRecord, SftRecord, DEFAULT_MIX_RATIO, SLICE,
};
pub use llm::{prompt_hash, HttpLlm, HttpLlmConfig, LlmClient, LlmError, Message, MockEntry, MockLlm, CREDENTIAL_ENV};
pub use manifest::{
    ingest, ingest_entries, normalize_source, record_id_for, GeneratorSpec, ManifestEntry, Origin, SourceRecord,
};
pub use stages::{
    compile_refine_route, cross_validate, distill_route, extract_code, gen_test_cases, record_task, validate_reference,
    CaseGenOptions, GeneratedCases, Route, TritonDraft,
};

use crate::exec::{BackendError, ExecutionBackend, JudgeError, JudgeOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("record {record_id}: no parseable test cases after {attempts} attempts")]
    AllRepliesUnparseable {
        record_id: String,
        attempts: usize,
        diagnostics: Vec<String>,
    },
    #[error("record {0} has no test cases")]
    NoTestCases(String),
    #[error("record {0} has not been validated")]
    NotValidated(String),
    #[error("record {0}: reply has no fenced code block")]
    NoCodeBlock(String),
    #[error("record {0}: backend cannot capture compiled kernels")]
    CaptureUnsupported(String),
    #[error("record {record_id}: compile capture failed: {message}")]
    CaptureFailed { record_id: String, message: String },
    #[error("backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mix_ratio: f64,
    pub seed: u64,
    pub cases: CaseGenOptions,
    pub judge: JudgeOptions,
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mix_ratio: DEFAULT_MIX_RATIO,
            seed: 0,
            cases: CaseGenOptions::default(),
            judge: JudgeOptions::default(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    /// Every ingested record, sorted by id, with its final state.
    pub records: Vec<SourceRecord>,
    /// Every draft produced, verified or not, sorted by record and route.
    pub drafts: Vec<TritonDraft>,
    pub datasets: Datasets,
}

/// Per-record stages. Recoverable stage failures become diagnostics on the
/// record; LLM and backend infrastructure failures abort.
fn process_record<B: ExecutionBackend + ?Sized>(
    mut record: SourceRecord,
    llm: &dyn LlmClient,
    backend: &mut B,
    config: &PipelineConfig,
) -> Result<(SourceRecord, Vec<TritonDraft>), PipelineError> {
    match gen_test_cases(&record, llm, &config.cases) {
        Ok(generated) => {
            record.test_cases = generated.cases;
            record.diagnostics.extend(generated.diagnostics);
        }
        Err(PipelineError::AllRepliesUnparseable { diagnostics, .. }) => {
            record.diagnostics.extend(diagnostics);
            record.diagnostics.push("no usable test cases".into());
            return Ok((record, Vec::new()));
        }
        Err(e) => return Err(e),
    }
    let record = validate_reference(&record, backend, config.judge.case_timeout_s)?;
    if !record.validated {
        return Ok((record, Vec::new()));
    }
    let mut record = record;
    let mut candidates = Vec::new();
    match distill_route(&record, llm) {
        Ok(d) => candidates.push(d),
        Err(PipelineError::NoCodeBlock(_)) => record.diagnostics.push("distill: no code block".into()),
        Err(e) => return Err(e),
    }
    match compile_refine_route(&record, backend, llm, config.judge.compile_timeout_s) {
        Ok(d) => candidates.push(d),
        Err(PipelineError::CaptureUnsupported(_)) => {}
        Err(PipelineError::NoCodeBlock(_)) => record.diagnostics.push("compile_refine: no code block".into()),
        Err(PipelineError::CaptureFailed { message, .. }) => record
            .diagnostics
            .push(format!("compile_refine: capture failed: {message}")),
        Err(e) => return Err(e),
    }
    let mut drafts = Vec::with_capacity(candidates.len());
    for d in &candidates {
        drafts.push(cross_validate(d, &record, backend, &config.judge)?);
    }
    Ok((record, drafts))
}

/// Runs every stage over `records` with up to `config.parallelism` workers,
/// each owning a backend from `make_backend`. Output does not depend on the
/// degree of parallelism.
pub fn run_pipeline<B, F>(
    records: Vec<SourceRecord>,
    llm: &dyn LlmClient,
    make_backend: F,
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError>
where
    B: ExecutionBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let queue = Mutex::new(records.into_iter().collect::<std::collections::VecDeque<_>>());
    let results = Mutex::new(Vec::new());
    let workers = config.parallelism.max(1);
    let outcome: Result<(), PipelineError> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| -> Result<(), PipelineError> {
                    let mut backend: Option<B> = None;
                    loop {
                        let Some(record) = queue.lock().expect("queue poisoned").pop_front() else {
                            return Ok(());
                        };
                        if backend.is_none() {
                            backend = Some(make_backend().map_err(|e| PipelineError::Backend(e.to_string()))?);
                        }
                        let b = backend.as_mut().expect("created above");
                        let done = process_record(record, llm, b, config);
                        match done {
                            Ok(r) => results.lock().expect("results poisoned").push(r),
                            Err(e) => {
                                queue.lock().expect("queue poisoned").clear();
                                return Err(e);
                            }
                        }
                    }
                })
            })
            .collect();
        let mut first_err = Ok(());
        for h in handles {
            if let Err(e) = h.join().expect("pipeline worker panicked") {
                if first_err.is_ok() {
                    first_err = Err(e);
                }
            }
        }
        first_err
    });
    outcome?;

    let mut processed = results.into_inner().expect("results poisoned");
    processed.sort_by(|a, b| a.0.record_id.cmp(&b.0.record_id));
    let mut records = Vec::with_capacity(processed.len());
    let mut drafts = Vec::new();
    for (r, d) in processed {
        records.push(r);
        drafts.extend(d);
    }
    drafts.sort_by(|a, b| (&a.record_id, a.route).cmp(&(&b.record_id, b.route)));
    let datasets = emit_datasets(&drafts, &records, config.mix_ratio, config.seed)?;
    Ok(PipelineRun {
        records,
        drafts,
        datasets,
    })
}
