//! Functional-equivalence judging of candidates against reference sources.

mod backend;
mod compare;
mod fixture;
mod inputs;
mod interp;
mod judge;
mod protocol;
mod task;
mod tensor;
mod worker;

pub use backend::{BackendError, Capabilities, ExecutionBackend};
pub use compare::{compare_tensors, Comparison};
pub use fixture::{FixtureBackend, TranscriptEntry, LAUNCH_OVERHEAD_NS};
pub use inputs::{generate_inputs, generate_tensor, mix, BudgetExceeded, DEFAULT_ELEMENT_BUDGET};
pub use interp::{InterpError, Outcome, Program};
pub use judge::{
    judge, judge_batch, BaselineMode, CaseResult, ExecStatus, ExecVerdict, JudgeError, JudgeJob, JudgeOptions,
    JudgedCandidate,
};
pub use protocol::{parse_reply, JobInput, JobMode, ProtocolError, Stage, WorkerJob, WorkerReply, PROTOCOL_VERSION};
pub use task::{
    Channel, DType, Distribution, KernelTask, ReferenceKind, TaskError, TensorSpec, TestCase, DEFAULT_ATOL,
    DEFAULT_RTOL,
};
pub use tensor::{cast, EncodedTensor, Tensor, TensorError};
pub use worker::{WorkerBackend, WorkerConfig};
