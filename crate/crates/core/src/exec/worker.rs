use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::backend::{BackendError, Capabilities, ExecutionBackend};
use super::protocol::{parse_reply, WorkerJob, WorkerReply};

/// Grace period on top of a job's own timeout before the worker is declared hung.
const REPLY_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub capabilities: Capabilities,
}

impl WorkerConfig {
    /// `program --device <device> --trials <trials>`.
    pub fn new(program: impl Into<PathBuf>, device: &str, trials: u32) -> Self {
        Self {
            program: program.into(),
            args: vec!["--device".into(), device.into(), "--trials".into(), trials.to_string()],
            capabilities: Capabilities {
                can_compile_capture: true,
                can_time: true,
            },
        }
    }
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Drives an external worker process over its stdin/stdout, one job at a time.
///
/// A worker that stops answering is killed and respawned on the next job.
pub struct WorkerBackend {
    config: WorkerConfig,
    running: Option<Running>,
}

impl WorkerBackend {
    pub fn new(config: WorkerConfig) -> Result<Self, BackendError> {
        if !Path::new(&config.program).exists() {
            return Err(BackendError::Unavailable(format!(
                "worker executable {} does not exist",
                config.program.display()
            )));
        }
        Ok(Self { config, running: None })
    }

    fn spawn(&self) -> Result<Running, BackendError> {
        let mut child = Command::new(&self.config.program)
            .args(&self.config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", self.config.program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn kill(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }
}

impl Drop for WorkerBackend {
    fn drop(&mut self) {
        self.kill();
    }
}

impl ExecutionBackend for WorkerBackend {
    fn capabilities(&self) -> Capabilities {
        self.config.capabilities
    }

    fn submit(&mut self, job: &WorkerJob) -> Result<WorkerReply, BackendError> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let line = serde_json::to_string(job).expect("jobs always serialize");
        let wait = Duration::from_secs_f64(job.timeout_s.max(0.0)) + REPLY_GRACE;
        let running = self.running.as_mut().expect("spawned above");
        let sent = writeln!(running.stdin, "{line}").and_then(|_| running.stdin.flush());
        if let Err(e) = sent {
            self.kill();
            return Err(BackendError::Unavailable(format!("worker stdin closed: {e}")));
        }
        loop {
            let running = self.running.as_mut().expect("spawned above");
            match running.lines.recv_timeout(wait) {
                Ok(Ok(reply)) if reply.trim().is_empty() => continue,
                Ok(Ok(reply)) => {
                    return parse_reply(&reply, &job.job_id).map_err(BackendError::from);
                }
                Ok(Err(e)) => {
                    self.kill();
                    return Err(BackendError::Unavailable(format!("reading worker output: {e}")));
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    return Err(BackendError::Timeout(wait.as_secs_f64()));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.kill();
                    return Err(BackendError::Unavailable("worker exited".into()));
                }
            }
        }
    }
}
