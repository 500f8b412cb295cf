use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use super::task::DType;

/// A dense row-major tensor. Values are stored as `f64` but are always exactly
/// representable in `dtype`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid base64 payload: {0}")]
    Base64(String),
    #[error("payload of {len} bytes is not a whole number of {dtype:?} elements")]
    Truncated { len: usize, dtype: DType },
}

/// Rounds `x` to the nearest value representable in `dtype`.
///
/// Integer dtypes floor and saturate; `bool` is "floor is nonzero".
pub fn cast(x: f64, dtype: DType) -> f64 {
    match dtype {
        DType::F32 => x as f32 as f64,
        DType::F16 => f16::from_f64(x).to_f64(),
        DType::Bf16 => bf16::from_f64(x).to_f64(),
        DType::I32 => {
            if x.is_nan() {
                0.0
            } else {
                x.floor().clamp(i32::MIN as f64, i32::MAX as f64)
            }
        }
        DType::I64 => {
            if x.is_nan() {
                0.0
            } else {
                (x.floor() as i64) as f64
            }
        }
        DType::Bool => {
            if !x.is_nan() && x.floor() != 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, dtype: DType, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        let data = data.into_iter().map(|x| cast(x, dtype)).collect();
        Ok(Self { shape, dtype, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Little-endian row-major bytes in the tensor's dtype.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * self.dtype.size_bytes());
        for &x in &self.data {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                DType::F16 => out.extend_from_slice(&f16::from_f64(x).to_le_bytes()),
                DType::Bf16 => out.extend_from_slice(&bf16::from_f64(x).to_le_bytes()),
                DType::I32 => out.extend_from_slice(&(x as i32).to_le_bytes()),
                DType::I64 => out.extend_from_slice(&(x as i64).to_le_bytes()),
                DType::Bool => out.push(u8::from(x != 0.0)),
            }
        }
        out
    }

    pub fn from_le_bytes(shape: Vec<usize>, dtype: DType, bytes: &[u8]) -> Result<Self, TensorError> {
        let width = dtype.size_bytes();
        if !bytes.len().is_multiple_of(width) {
            return Err(TensorError::Truncated {
                len: bytes.len(),
                dtype,
            });
        }
        let data = bytes
            .chunks_exact(width)
            .map(|c| match dtype {
                DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                DType::F16 => f16::from_le_bytes(c.try_into().unwrap()).to_f64(),
                DType::Bf16 => bf16::from_le_bytes(c.try_into().unwrap()).to_f64(),
                DType::I32 => i32::from_le_bytes(c.try_into().unwrap()) as f64,
                DType::I64 => i64::from_le_bytes(c.try_into().unwrap()) as f64,
                DType::Bool => f64::from(c[0] != 0),
            })
            .collect();
        Tensor::new(shape, dtype, data)
    }

    pub fn encode(&self) -> EncodedTensor {
        EncodedTensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data_b64: B64.encode(self.to_le_bytes()),
        }
    }
}

/// Wire form of a tensor: base64 of little-endian row-major bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub data_b64: String,
}

impl EncodedTensor {
    pub fn decode(&self) -> Result<Tensor, TensorError> {
        let bytes = B64
            .decode(self.data_b64.as_bytes())
            .map_err(|e| TensorError::Base64(e.to_string()))?;
        Tensor::from_le_bytes(self.shape.clone(), self.dtype, &bytes)
    }
}
