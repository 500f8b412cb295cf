//! Newline-delimited JSON protocol spoken with execution workers.

use serde::{Deserialize, Serialize};

use super::task::{DType, Distribution, TensorSpec, TestCase};
use super::tensor::EncodedTensor;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobMode {
    RunReference,
    RunCandidate,
    CompileCapture,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Compile,
    Call,
    Exec,
}

/// One input tensor of a job: its spec plus the case seed. The input index
/// that keys the generator is the position in the `inputs` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobInput {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub distribution: Distribution,
    pub seed: u64,
}

impl JobInput {
    pub fn spec(&self) -> TensorSpec {
        TensorSpec::new(self.shape.clone(), self.dtype, self.distribution)
    }

    pub fn from_case(case: &TestCase) -> Vec<JobInput> {
        case.inputs
            .iter()
            .map(|s| JobInput {
                shape: s.shape.clone(),
                dtype: s.dtype,
                distribution: s.distribution,
                seed: case.seed,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerJob {
    pub v: u32,
    pub job_id: String,
    pub mode: JobMode,
    pub source: String,
    pub entry: String,
    pub inputs: Vec<JobInput>,
    pub timeout_s: f64,
    /// Timing-only fields; absent for other modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    /// `"eager"` or `"compiled"` host baseline, for timing the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
}

impl WorkerJob {
    pub fn new(
        job_id: impl Into<String>,
        mode: JobMode,
        source: &str,
        entry: &str,
        inputs: Vec<JobInput>,
        timeout_s: f64,
    ) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            job_id: job_id.into(),
            mode,
            source: source.to_string(),
            entry: entry.to_string(),
            inputs,
            timeout_s,
            warmup: None,
            trials: None,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReply {
    pub v: u32,
    /// Absent only on replies to unparseable requests.
    #[serde(default)]
    pub job_id: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default)]
    pub outputs: Vec<EncodedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Captured kernel text for `compile_capture`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compiler_version: Option<String>,
}

impl WorkerReply {
    pub fn success(job_id: &str, outputs: Vec<EncodedTensor>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            job_id: Some(job_id.to_string()),
            ok: true,
            stage: None,
            outputs,
            time_ns: None,
            error: None,
            capture: None,
            compiler_version: None,
        }
    }

    pub fn failure(job_id: &str, stage: Stage, error: impl Into<String>) -> Self {
        Self {
            ok: false,
            stage: Some(stage),
            error: Some(error.into()),
            ..Self::success(job_id, Vec::new())
        }
    }

    pub fn is_timeout(&self) -> bool {
        !self.ok && self.error.as_deref().is_some_and(|e| e.starts_with("timeout"))
    }

    /// The worker cannot run device kernels at all; not a verdict on the source.
    pub fn is_no_gpu(&self) -> bool {
        !self.ok && self.error.as_deref() == Some("no-gpu")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("protocol version {got}, expected {expected}")]
    Version { got: u32, expected: u32 },
    #[error("reply for job {got:?} while waiting for {expected}")]
    JobIdMismatch { got: Option<String>, expected: String },
}

/// Parses one reply line and checks it against the job it answers.
pub fn parse_reply(line: &str, expected_job: &str) -> Result<WorkerReply, ProtocolError> {
    let reply: WorkerReply = serde_json::from_str(line.trim()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if reply.v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version {
            got: reply.v,
            expected: PROTOCOL_VERSION,
        });
    }
    if reply.job_id.as_deref() != Some(expected_job) {
        return Err(ProtocolError::JobIdMismatch {
            got: reply.job_id,
            expected: expected_job.to_string(),
        });
    }
    Ok(reply)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let case = TestCase::new("c", 5, vec![TensorSpec::new(vec![2], DType::F32, Distribution::Arange)]);
        let job = WorkerJob::new(
            "j1",
            JobMode::RunReference,
            "src",
            "forward",
            JobInput::from_case(&case),
            60.0,
        );
        let json = serde_json::to_value(&job).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "v": 1, "job_id": "j1", "mode": "run_reference", "source": "src", "entry": "forward",
                "inputs": [{"shape": [2], "dtype": "f32", "distribution": {"kind": "ARANGE"}, "seed": 5}],
                "timeout_s": 60.0
            })
        );
    }

    #[test]
    fn reply_parsing_rules() {
        let ok = r#"{"v":1,"job_id":"a","ok":true,"stage":"exec","outputs":[],"extra":"ignored"}"#;
        assert!(parse_reply(ok, "a").unwrap().ok);
        assert!(matches!(
            parse_reply(r#"{"v":2,"job_id":"a","ok":true}"#, "a"),
            Err(ProtocolError::Version { got: 2, .. })
        ));
        assert!(matches!(
            parse_reply(r#"{"v":1,"job_id":"b","ok":true}"#, "a"),
            Err(ProtocolError::JobIdMismatch { .. })
        ));
        assert!(matches!(parse_reply("not json", "a"), Err(ProtocolError::Malformed(_))));
        let timeout = r#"{"v":1,"job_id":"a","ok":false,"stage":"exec","error":"timeout after 1s"}"#;
        assert!(parse_reply(timeout, "a").unwrap().is_timeout());
    }
}
