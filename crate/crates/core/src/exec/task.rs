use serde::{Deserialize, Serialize};

use crate::source::SourceUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Channel {
    TbG,
    TbT,
    KbL1,
    KbL2,
    KbL3,
    Custom,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::TbG => "TB_G",
            Channel::TbT => "TB_T",
            Channel::KbL1 => "KB_L1",
            Channel::KbL2 => "KB_L2",
            Channel::KbL3 => "KB_L3",
            Channel::Custom => "CUSTOM",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReferenceKind {
    HostTensor,
    ReferenceTriton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[serde(alias = "float32")]
    F32,
    #[serde(alias = "float16")]
    F16,
    #[serde(alias = "bfloat16")]
    Bf16,
    #[serde(alias = "int32")]
    I32,
    #[serde(alias = "int64")]
    I64,
    Bool,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F16 | DType::Bf16 => 2,
            DType::I64 => 8,
            DType::Bool => 1,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F16 | DType::Bf16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mu: f64, sigma: f64 },
    Arange,
    Constant { v: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub distribution: Distribution,
}

impl TensorSpec {
    pub fn new(shape: Vec<usize>, dtype: DType, distribution: Distribution) -> Self {
        Self {
            shape,
            dtype,
            distribution,
        }
    }

    /// Element count; saturates instead of overflowing so budget checks stay meaningful.
    pub fn numel(&self) -> usize {
        self.shape.iter().fold(1usize, |acc, &d| acc.saturating_mul(d))
    }
}

pub const DEFAULT_RTOL: f64 = 1e-2;
pub const DEFAULT_ATOL: f64 = 1e-2;

fn default_rtol() -> f64 {
    DEFAULT_RTOL
}

fn default_atol() -> f64 {
    DEFAULT_ATOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub seed: u64,
    pub inputs: Vec<TensorSpec>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

impl TestCase {
    pub fn new(case_id: impl Into<String>, seed: u64, inputs: Vec<TensorSpec>) -> Self {
        Self {
            case_id: case_id.into(),
            seed,
            inputs,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }

    pub fn with_tolerance(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTask {
    pub task_id: String,
    pub instruction: String,
    pub reference_source: SourceUnit,
    pub reference_kind: ReferenceKind,
    pub test_cases: Vec<TestCase>,
    pub channel: Channel,
    pub entry_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("task {0} has no test cases")]
    NoTestCases(String),
    #[error("task {0}: a reference Triton baseline is only valid on channel TB_G")]
    ReferenceKindChannel(String),
    #[error("task {0}: no entry name declared")]
    NoEntry(String),
    #[error("task {task}, case {case}: negative or non-finite tolerance")]
    BadTolerance { task: String, case: String },
}

impl KernelTask {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.test_cases.is_empty() {
            return Err(TaskError::NoTestCases(self.task_id.clone()));
        }
        if self.reference_kind == ReferenceKind::ReferenceTriton && self.channel != Channel::TbG {
            return Err(TaskError::ReferenceKindChannel(self.task_id.clone()));
        }
        if self.entry_names.is_empty() {
            return Err(TaskError::NoEntry(self.task_id.clone()));
        }
        for case in &self.test_cases {
            let ok = |t: f64| t.is_finite() && t >= 0.0;
            if !ok(case.rtol) || !ok(case.atol) {
                return Err(TaskError::BadTolerance {
                    task: self.task_id.clone(),
                    case: case.case_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// The entry the backend invokes: the first declared entry name.
    pub fn primary_entry(&self) -> &str {
        self.entry_names.first().map(String::as_str).unwrap_or("forward")
    }
}
