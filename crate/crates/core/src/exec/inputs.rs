//! Deterministic test-input generation.
//!
//! Every element is a pure function of `(seed, input index, element index)`,
//! so a worker in another language can reproduce the exact bytes:
//!
//! ```text
//! mix(z)      = splitmix64 finalizer
//! key         = mix(seed + GOLDEN * (input_index + 1))
//! bits(n)     = mix(key + GOLDEN * (n + 1))             (wrapping u64 arithmetic)
//! unit(n)     = (bits(n) >> 11) * 2^-53                 in [0, 1)
//! UNIFORM     lo + (hi - lo) * unit(j)
//! NORMAL      mu + sigma * sqrt(-2 ln(1 - unit(2j))) * cos(2 pi unit(2j + 1))
//! ARANGE      j
//! CONSTANT    v
//! ```
//!
//! Values are generated in `f64` and then cast to the spec's dtype.

use super::task::{Distribution, TensorSpec, TestCase};
use super::tensor::{cast, Tensor};

pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Per-tensor element cap.
pub const DEFAULT_ELEMENT_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("input {index} of case {case_id} has {numel} elements, budget is {budget}")]
pub struct BudgetExceeded {
    pub case_id: String,
    pub index: usize,
    pub numel: usize,
    pub budget: usize,
}

pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct Stream {
    key: u64,
}

impl Stream {
    fn new(seed: u64, input_index: usize) -> Self {
        Self {
            key: mix(seed.wrapping_add(GOLDEN.wrapping_mul(input_index as u64 + 1))),
        }
    }

    fn unit(self, n: u64) -> f64 {
        let bits = mix(self.key.wrapping_add(GOLDEN.wrapping_mul(n.wrapping_add(1))));
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Generates one tensor without a budget check.
pub fn generate_tensor(spec: &TensorSpec, seed: u64, input_index: usize) -> Tensor {
    let stream = Stream::new(seed, input_index);
    let n = spec.numel();
    let data: Vec<f64> = (0..n as u64)
        .map(|j| {
            let x = match spec.distribution {
                Distribution::Uniform { lo, hi } => lo + (hi - lo) * stream.unit(j),
                Distribution::Normal { mu, sigma } => {
                    let u1 = stream.unit(2 * j);
                    let u2 = stream.unit(2 * j + 1);
                    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
                    mu + sigma * r * (2.0 * std::f64::consts::PI * u2).cos()
                }
                Distribution::Arange => j as f64,
                Distribution::Constant { v } => v,
            };
            cast(x, spec.dtype)
        })
        .collect();
    Tensor {
        shape: spec.shape.clone(),
        dtype: spec.dtype,
        data,
    }
}

pub fn generate_inputs(case: &TestCase, budget: usize) -> Result<Vec<Tensor>, BudgetExceeded> {
    for (index, spec) in case.inputs.iter().enumerate() {
        let numel = spec.numel();
        if numel > budget {
            return Err(BudgetExceeded {
                case_id: case.case_id.clone(),
                index,
                numel,
                budget,
            });
        }
    }
    Ok(case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, spec)| generate_tensor(spec, case.seed, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::task::DType;

    fn case(spec: TensorSpec, seed: u64) -> TestCase {
        TestCase::new("c", seed, vec![spec])
    }

    #[test]
    fn constant_zero() {
        let t = &generate_inputs(
            &case(
                TensorSpec::new(vec![2, 2], DType::F32, Distribution::Constant { v: 0.0 }),
                1,
            ),
            DEFAULT_ELEMENT_BUDGET,
        )
        .unwrap()[0];
        assert_eq!(t.shape, vec![2, 2]);
        assert_eq!(t.data, vec![0.0; 4]);
    }

    #[test]
    fn arange() {
        let t = generate_tensor(&TensorSpec::new(vec![4], DType::F32, Distribution::Arange), 9, 0);
        assert_eq!(t.data, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn deterministic_and_keyed_by_index() {
        let spec = TensorSpec::new(vec![64], DType::F32, Distribution::Normal { mu: 0.0, sigma: 1.0 });
        let a = generate_tensor(&spec, 42, 0);
        assert_eq!(a, generate_tensor(&spec, 42, 0));
        assert_ne!(a, generate_tensor(&spec, 42, 1));
        assert_ne!(a, generate_tensor(&spec, 43, 0));
    }

    #[test]
    fn frozen_stream_values() {
        // pinned so a reimplementation can check itself
        assert_eq!(mix(0), 0);
        assert_eq!(mix(1), 0x5692_161D_100B_05E5);
        // computed independently with Python integer arithmetic
        assert_eq!(Stream::new(0, 0).unit(0), 0.6524484863740322);
    }

    #[test]
    fn uniform_stays_in_range() {
        let spec = TensorSpec::new(vec![1000], DType::F32, Distribution::Uniform { lo: -2.0, hi: 3.0 });
        let t = generate_tensor(&spec, 7, 2);
        assert!(t.data.iter().all(|&x| (-2.0..=3.0).contains(&x)));
        let mean = t.data.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.2, "{mean}");
    }

    #[test]
    fn budget_exceeded() {
        let spec = TensorSpec::new(vec![10, 10], DType::F32, Distribution::Arange);
        let err = generate_inputs(&case(spec, 0), 99).unwrap_err();
        assert_eq!(err.numel, 100);
    }
}
