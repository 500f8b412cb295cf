use std::path::PathBuf;

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use tritonjudge_core::exec::{
    BackendError, BaselineMode, Capabilities, ExecutionBackend, FixtureBackend, JudgeOptions, TranscriptEntry,
    WorkerBackend, WorkerConfig, WorkerJob, WorkerReply,
};

use crate::io::{read_json, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// In-process interpreter over fixture directives and recorded transcripts
    Fixture,
    /// External worker process speaking the NDJSON protocol
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Eager,
    Compiled,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "fixture")]
    pub backend: BackendKind,
    /// Worker executable, required with `--backend worker`
    #[arg(long)]
    pub worker: Option<PathBuf>,
    #[arg(long, default_value = "cuda:0")]
    pub device: String,
    /// Recorded worker replies (JSON array) for the fixture backend
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: u32,
    #[arg(long, default_value_t = 3)]
    pub warmup: u32,
    #[arg(long, value_enum, default_value = "eager")]
    pub baseline: Baseline,
}

pub enum AnyBackend {
    Fixture(FixtureBackend),
    Worker(WorkerBackend),
}

impl ExecutionBackend for AnyBackend {
    fn capabilities(&self) -> Capabilities {
        match self {
            AnyBackend::Fixture(b) => b.capabilities(),
            AnyBackend::Worker(b) => b.capabilities(),
        }
    }

    fn submit(&mut self, job: &WorkerJob) -> Result<WorkerReply, BackendError> {
        match self {
            AnyBackend::Fixture(b) => b.submit(job),
            AnyBackend::Worker(b) => b.submit(job),
        }
    }
}

/// Builds backends for worker threads. Construction problems that do not
/// depend on the thread (missing worker, unreadable transcripts) surface here.
pub struct BackendFactory {
    fixture: Option<FixtureBackend>,
    worker: Option<WorkerConfig>,
}

impl BackendFactory {
    pub fn from_args(args: &BackendArgs) -> Result<Self, Failure> {
        match args.backend {
            BackendKind::Fixture => {
                let mut fixture = FixtureBackend::new();
                if let Some(path) = &args.transcripts {
                    let entries: Vec<TranscriptEntry> = read_json(path)?;
                    fixture = fixture.with_transcripts(entries);
                }
                Ok(Self {
                    fixture: Some(fixture),
                    worker: None,
                })
            }
            BackendKind::Worker => {
                let Some(program) = &args.worker else {
                    return Err(Failure::Input(anyhow!("--backend worker needs --worker PATH")));
                };
                if !program.exists() {
                    return Err(Failure::Infra(anyhow!(
                        "worker executable {} does not exist",
                        program.display()
                    )));
                }
                Ok(Self {
                    fixture: None,
                    worker: Some(WorkerConfig::new(program, &args.device, args.trials)),
                })
            }
        }
    }

    pub fn make(&self) -> Result<AnyBackend, BackendError> {
        match (&self.fixture, &self.worker) {
            (Some(f), _) => Ok(AnyBackend::Fixture(f.clone())),
            (None, Some(w)) => WorkerBackend::new(w.clone()).map(AnyBackend::Worker),
            (None, None) => Err(BackendError::Unavailable("no backend configured".into())),
        }
    }
}

pub fn judge_options(args: &BackendArgs) -> JudgeOptions {
    JudgeOptions {
        timing_trials: args.trials,
        warmup_runs: args.warmup,
        baseline: match args.baseline {
            Baseline::Eager => BaselineMode::Eager,
            Baseline::Compiled => BaselineMode::Compiled,
        },
        ..JudgeOptions::default()
    }
}
