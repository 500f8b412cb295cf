//! Evaluation and reward harness for generated Triton kernels.
//!
//! - [`lint`]: structural checks deciding whether a source is Triton code.
//! - [`exec`]: functional-equivalence judging against a reference.
//! - [`reward`]: binary reward, group-normalized advantages, GRPO surrogate.
//! - [`metrics`]: accuracy ladder, `fast_p`, pass@k and speedup percentiles.
//! - [`pipeline`]: dataset curation from host-tensor kernels.

pub mod exec;
pub mod lint;
pub mod metrics;
pub mod pipeline;
pub mod reward;
mod source;
mod util;

pub use exec::{Channel, ExecStatus, ExecVerdict, KernelTask, TestCase};
pub use lint::{LintConfig, LintVerdict, Strictness};
pub use source::SourceUnit;
