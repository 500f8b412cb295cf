use super::protocol::{ProtocolError, WorkerJob, WorkerReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub can_compile_capture: bool,
    pub can_time: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    /// The backend stopped answering within the job's wall-clock budget.
    #[error("no reply within {0:.1}s")]
    Timeout(f64),
}

/// Something that can execute worker jobs.
///
/// Implementations must tolerate sequential reuse; sharing one instance
/// across threads is not required.
pub trait ExecutionBackend {
    fn capabilities(&self) -> Capabilities;

    fn submit(&mut self, job: &WorkerJob) -> Result<WorkerReply, BackendError>;
}

impl<B: ExecutionBackend + ?Sized> ExecutionBackend for Box<B> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn submit(&mut self, job: &WorkerJob) -> Result<WorkerReply, BackendError> {
        (**self).submit(job)
    }
}
