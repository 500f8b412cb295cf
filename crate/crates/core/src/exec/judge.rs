use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, ExecutionBackend};
use super::compare::compare_tensors;
use super::protocol::{JobInput, JobMode, Stage, WorkerJob, WorkerReply};
use super::task::{KernelTask, TaskError};
use super::tensor::{Tensor, TensorError};
use crate::source::SourceUnit;
use crate::util::lossless_f64;

/// Outcome ladder, ordered from worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecStatus {
    CompileError,
    CallError,
    Timeout,
    Mismatch,
    Pass,
}

impl ExecStatus {
    pub const ALL: [ExecStatus; 5] = [
        ExecStatus::CompileError,
        ExecStatus::CallError,
        ExecStatus::Timeout,
        ExecStatus::Mismatch,
        ExecStatus::Pass,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub pass: bool,
    #[serde(with = "lossless_f64")]
    pub max_abs_err: f64,
    #[serde(with = "lossless_f64")]
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecVerdict {
    pub status: ExecStatus,
    pub per_case: Vec<CaseResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_time_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_time_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExecVerdict {
    fn failed(status: ExecStatus, per_case: Vec<CaseResult>, error: Option<String>) -> Self {
        Self {
            status,
            per_case,
            candidate_time_ns: None,
            baseline_time_ns: None,
            speedup: None,
            error,
        }
    }

    /// A bare verdict with the given status, for synthetic result sets.
    pub fn synthetic(status: ExecStatus, speedup: Option<f64>) -> Self {
        Self {
            status,
            per_case: Vec::new(),
            candidate_time_ns: None,
            baseline_time_ns: None,
            speedup: if status == ExecStatus::Pass { speedup } else { None },
            error: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    #[default]
    Eager,
    Compiled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOptions {
    pub timing_trials: u32,
    pub warmup_runs: u32,
    pub compile_timeout_s: f64,
    pub case_timeout_s: f64,
    pub total_budget_s: f64,
    pub baseline: BaselineMode,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        Self {
            timing_trials: 20,
            warmup_runs: 3,
            compile_timeout_s: 120.0,
            case_timeout_s: 60.0,
            total_budget_s: 600.0,
            baseline: BaselineMode::Eager,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("timing_trials must be positive")]
    NoTrials,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("reference failed on case {case_id} at {stage:?}: {message}")]
    ReferenceFailed {
        case_id: String,
        stage: Option<Stage>,
        message: String,
    },
}

impl From<TensorError> for JudgeError {
    fn from(e: TensorError) -> Self {
        JudgeError::Protocol(e.to_string())
    }
}

fn submit<B: ExecutionBackend + ?Sized>(backend: &mut B, job: &WorkerJob) -> Result<Option<WorkerReply>, JudgeError> {
    match backend.submit(job) {
        Ok(r) if r.is_no_gpu() => Err(JudgeError::BackendUnavailable(format!(
            "worker has no GPU (job {})",
            job.job_id
        ))),
        Ok(r) => Ok(Some(r)),
        Err(BackendError::Timeout(_)) => Ok(None),
        Err(BackendError::Unavailable(m)) => Err(JudgeError::BackendUnavailable(m)),
        Err(BackendError::Protocol(p)) => Err(JudgeError::Protocol(p.to_string())),
    }
}

fn decode_all(reply: &WorkerReply) -> Result<Vec<Tensor>, JudgeError> {
    reply
        .outputs
        .iter()
        .map(|o| o.decode().map_err(JudgeError::from))
        .collect()
}

fn failure_status(reply: &WorkerReply) -> ExecStatus {
    if reply.is_timeout() {
        return ExecStatus::Timeout;
    }
    match reply.stage {
        Some(Stage::Compile) => ExecStatus::CompileError,
        // an exception anywhere inside the invoked entry is an invocation failure
        Some(Stage::Call) | Some(Stage::Exec) | None => ExecStatus::CallError,
    }
}

fn failing_case(case_id: &str) -> CaseResult {
    CaseResult {
        case_id: case_id.to_string(),
        pass: false,
        max_abs_err: f64::INFINITY,
        max_rel_err: f64::INFINITY,
    }
}

/// Judges `candidate` against the task's reference on every test case, then
/// times both on the largest case when the candidate passes.
pub fn judge<B: ExecutionBackend + ?Sized>(
    task: &KernelTask,
    candidate: &SourceUnit,
    backend: &mut B,
    options: &JudgeOptions,
) -> Result<ExecVerdict, JudgeError> {
    judge_inner(task, candidate, backend, options, None)
}

fn judge_inner<B: ExecutionBackend + ?Sized>(
    task: &KernelTask,
    candidate: &SourceUnit,
    backend: &mut B,
    options: &JudgeOptions,
    timing_lock: Option<&Mutex<()>>,
) -> Result<ExecVerdict, JudgeError> {
    task.validate()?;
    if options.timing_trials == 0 {
        return Err(JudgeError::NoTrials);
    }
    let started = Instant::now();
    let budget = Duration::from_secs_f64(options.total_budget_s);
    let entry = task.primary_entry();
    let mut per_case = Vec::with_capacity(task.test_cases.len());

    for (n, case) in task.test_cases.iter().enumerate() {
        let inputs = JobInput::from_case(case);
        let ref_job = WorkerJob::new(
            format!("{}/{}/ref", task.task_id, case.case_id),
            JobMode::RunReference,
            &task.reference_source.raw_text,
            entry,
            inputs.clone(),
            options.case_timeout_s,
        );
        let reference = match submit(backend, &ref_job)? {
            Some(r) if r.ok => r,
            Some(r) => {
                return Err(JudgeError::ReferenceFailed {
                    case_id: case.case_id.clone(),
                    stage: r.stage,
                    message: r.error.unwrap_or_default(),
                })
            }
            None => {
                return Err(JudgeError::ReferenceFailed {
                    case_id: case.case_id.clone(),
                    stage: Some(Stage::Exec),
                    message: "timeout".into(),
                })
            }
        };
        let oracle = decode_all(&reference)?;

        // the first candidate run includes compilation
        let timeout = if n == 0 {
            options.compile_timeout_s + options.case_timeout_s
        } else {
            options.case_timeout_s
        };
        let cand_job = WorkerJob::new(
            format!("{}/{}/cand", task.task_id, case.case_id),
            JobMode::RunCandidate,
            &candidate.raw_text,
            entry,
            inputs,
            timeout,
        );
        let reply = match submit(backend, &cand_job)? {
            Some(r) => r,
            None => {
                per_case.push(failing_case(&case.case_id));
                return Ok(ExecVerdict::failed(
                    ExecStatus::Timeout,
                    per_case,
                    Some("no reply within budget".into()),
                ));
            }
        };
        if !reply.ok {
            per_case.push(failing_case(&case.case_id));
            return Ok(ExecVerdict::failed(failure_status(&reply), per_case, reply.error));
        }
        let outputs = decode_all(&reply)?;
        let result = if outputs.len() != oracle.len() {
            failing_case(&case.case_id)
        } else {
            let mut r = CaseResult {
                case_id: case.case_id.clone(),
                pass: true,
                max_abs_err: 0.0,
                max_rel_err: 0.0,
            };
            for (c, o) in outputs.iter().zip(&oracle) {
                let cmp = compare_tensors(c, o, case.rtol, case.atol);
                r.pass &= cmp.pass;
                r.max_abs_err = r.max_abs_err.max(cmp.max_abs_err);
                r.max_rel_err = r.max_rel_err.max(cmp.max_rel_err);
            }
            r
        };
        per_case.push(result);
        if started.elapsed() > budget {
            return Ok(ExecVerdict::failed(
                ExecStatus::Timeout,
                per_case,
                Some("candidate budget exhausted".into()),
            ));
        }
    }

    if per_case.iter().any(|c| !c.pass) {
        return Ok(ExecVerdict::failed(ExecStatus::Mismatch, per_case, None));
    }

    let mut verdict = ExecVerdict::failed(ExecStatus::Pass, per_case, None);
    if !backend.capabilities().can_time {
        return Ok(verdict);
    }
    let timing_case = task
        .test_cases
        .iter()
        .max_by_key(|c| {
            (
                c.inputs.iter().map(|s| s.numel()).sum::<usize>(),
                std::cmp::Reverse(c.case_id.clone()),
            )
        })
        .expect("validated non-empty");
    let _guard = timing_lock.map(|l| l.lock().unwrap_or_else(|p| p.into_inner()));
    let time = |backend: &mut B, role: &str, source: &str| -> Result<Option<u64>, JudgeError> {
        let mut job = WorkerJob::new(
            format!("{}/{}/time-{role}", task.task_id, timing_case.case_id),
            JobMode::Time,
            source,
            entry,
            JobInput::from_case(timing_case),
            options.case_timeout_s,
        );
        job.warmup = Some(options.warmup_runs);
        job.trials = Some(options.timing_trials);
        if role == "baseline" {
            job.baseline = Some(
                match options.baseline {
                    BaselineMode::Eager => "eager",
                    BaselineMode::Compiled => "compiled",
                }
                .to_string(),
            );
        }
        match submit(backend, &job)? {
            Some(r) if r.ok => match r.time_ns {
                Some(t) if t > 0 => Ok(Some(t)),
                _ => Err(JudgeError::Protocol("time reply without a positive time_ns".into())),
            },
            _ => Ok(None),
        }
    };
    let cand = time(backend, "candidate", &candidate.raw_text)?;
    let base = time(backend, "baseline", &task.reference_source.raw_text)?;
    if let (Some(c), Some(b)) = (cand, base) {
        verdict.candidate_time_ns = Some(c);
        verdict.baseline_time_ns = Some(b);
        verdict.speedup = Some(b as f64 / c as f64);
    }
    Ok(verdict)
}

/// One unit of work for [`judge_batch`].
#[derive(Debug, Clone)]
pub struct JudgeJob<'a> {
    pub task: &'a KernelTask,
    pub candidate_id: String,
    pub candidate: SourceUnit,
}

#[derive(Debug)]
pub struct JudgedCandidate {
    pub task_id: String,
    pub candidate_id: String,
    pub verdict: Result<ExecVerdict, JudgeError>,
}

/// Judges jobs on up to `parallelism` threads, each with its own backend from
/// `make_backend`. Timing jobs are serialized across threads so measurements
/// do not contend. Results come back sorted by `(task_id, candidate_id)`.
pub fn judge_batch<B, F>(
    jobs: &[JudgeJob<'_>],
    make_backend: F,
    parallelism: usize,
    options: &JudgeOptions,
) -> Vec<JudgedCandidate>
where
    B: ExecutionBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let next = AtomicUsize::new(0);
    let timing_lock = Mutex::new(());
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    let threads = parallelism.clamp(1, jobs.len().max(1));
    thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| {
                let mut backend = None;
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    if backend.is_none() {
                        match make_backend() {
                            Ok(b) => backend = Some(b),
                            Err(e) => {
                                results.lock().unwrap().push(JudgedCandidate {
                                    task_id: job.task.task_id.clone(),
                                    candidate_id: job.candidate_id.clone(),
                                    verdict: Err(JudgeError::BackendUnavailable(e.to_string())),
                                });
                                continue;
                            }
                        }
                    }
                    let b = backend.as_mut().expect("set above");
                    let verdict = judge_inner(job.task, &job.candidate, b, options, Some(&timing_lock));
                    results.lock().unwrap().push(JudgedCandidate {
                        task_id: job.task.task_id.clone(),
                        candidate_id: job.candidate_id.clone(),
                        verdict,
                    });
                }
            });
        }
    });
    let mut out = results.into_inner().unwrap();
    out.sort_by(|a, b| (&a.task_id, &a.candidate_id).cmp(&(&b.task_id, &b.candidate_id)));
    out
}
