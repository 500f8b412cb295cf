use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pass: bool,
    #[serde(with = "crate::util::lossless_f64")]
    pub max_abs_err: f64,
    #[serde(with = "crate::util::lossless_f64")]
    pub max_rel_err: f64,
}

impl Comparison {
    pub fn mismatch() -> Self {
        Self {
            pass: false,
            max_abs_err: f64::INFINITY,
            max_rel_err: f64::INFINITY,
        }
    }
}

/// Checks `|c - o| <= atol + rtol * |o|` elementwise, anchored on the oracle `o`.
///
/// Not symmetric: swapping the operands changes the relative bound. A NaN
/// position passes only when both sides are NaN there. Shape or dtype
/// mismatches fail with infinite error sentinels.
pub fn compare_tensors(candidate: &Tensor, oracle: &Tensor, rtol: f64, atol: f64) -> Comparison {
    if candidate.shape != oracle.shape || candidate.dtype != oracle.dtype {
        return Comparison::mismatch();
    }
    let mut pass = true;
    let mut max_abs_err = 0.0f64;
    let mut max_rel_err = 0.0f64;
    for (&c, &o) in candidate.data.iter().zip(&oracle.data) {
        let (abs, rel, ok) = if c.is_nan() || o.is_nan() {
            if c.is_nan() && o.is_nan() {
                (0.0, 0.0, true)
            } else {
                (f64::INFINITY, f64::INFINITY, false)
            }
        } else if c == o {
            (0.0, 0.0, true)
        } else {
            let abs = (c - o).abs();
            let rel = if o == 0.0 { f64::INFINITY } else { abs / o.abs() };
            (abs, rel, abs <= atol + rtol * o.abs())
        };
        pass &= ok;
        max_abs_err = max_abs_err.max(abs);
        max_rel_err = max_rel_err.max(rel);
    }
    Comparison {
        pass,
        max_abs_err,
        max_rel_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::task::DType;
    use proptest::prelude::*;

    fn t(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            dtype: DType::F32,
            data,
        }
    }

    #[test]
    fn identical_passes_with_zero_error() {
        let a = t(vec![1.0, -2.5, 0.0]);
        let c = compare_tensors(&a, &a, 0.0, 0.0);
        assert!(c.pass);
        assert_eq!(c.max_abs_err, 0.0);
    }

    #[test]
    fn half_off_fails() {
        let c = compare_tensors(&t(vec![1.0]), &t(vec![1.5]), 1e-2, 1e-2);
        assert!(!c.pass);
        assert_eq!(c.max_abs_err, 0.5);
    }

    #[test]
    fn scaled_within_rtol_passes() {
        let o: Vec<f64> = (1..=50).map(|i| i as f64 * 0.37 - 9.0).collect();
        let c: Vec<f64> = o.iter().map(|x| x * (1.0 + 5e-3)).collect();
        // independent elementwise check of the inequality
        let oracle_pass = c.iter().zip(&o).all(|(c, o)| (c - o).abs() <= 1e-2 * o.abs());
        assert!(oracle_pass);
        let res = compare_tensors(
            &Tensor {
                shape: vec![50],
                dtype: DType::F32,
                data: c,
            },
            &Tensor {
                shape: vec![50],
                dtype: DType::F32,
                data: o,
            },
            1e-2,
            0.0,
        );
        assert_eq!(res.pass, oracle_pass);
    }

    #[test]
    fn anchored_not_symmetric() {
        // |1.0 - 0.9| = 0.1; 0.1 * 1.0 allows it, 0.1 * 0.9 does not
        let a = t(vec![1.0]);
        let b = t(vec![0.9]);
        assert!(compare_tensors(&b, &a, 0.1, 0.0).pass);
        assert!(!compare_tensors(&a, &b, 0.1, 0.0).pass);
    }

    #[test]
    fn nan_and_shape_rules() {
        assert!(compare_tensors(&t(vec![f64::NAN]), &t(vec![f64::NAN]), 0.0, 0.0).pass);
        assert!(!compare_tensors(&t(vec![f64::NAN]), &t(vec![1.0]), 1.0, 1.0).pass);
        assert!(!compare_tensors(&t(vec![1.0]), &t(vec![f64::NAN]), 1.0, 1.0).pass);
        assert!(compare_tensors(&t(vec![f64::INFINITY]), &t(vec![f64::INFINITY]), 0.0, 0.0).pass);
        let c = compare_tensors(&t(vec![1.0, 2.0]), &t(vec![1.0]), 1.0, 1.0);
        assert_eq!(c, Comparison::mismatch());
        let mut other = t(vec![1.0]);
        other.dtype = DType::F16;
        assert!(!compare_tensors(&other, &t(vec![1.0]), 1.0, 1.0).pass);
    }

    #[test]
    fn infinite_errors_serialize() {
        let json = serde_json::to_string(&Comparison::mismatch()).unwrap();
        let back: Comparison = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Comparison::mismatch());
    }

    proptest! {
        #[test]
        fn tolerance_monotone(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..16),
            rtol in 0.0f64..0.5, atol in 0.0f64..0.5, dr in 0.0f64..0.5, da in 0.0f64..0.5,
        ) {
            let (c, o): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (c, o) = (t(c), t(o));
            if compare_tensors(&c, &o, rtol, atol).pass {
                prop_assert!(compare_tensors(&c, &o, rtol + dr, atol + da).pass);
            }
        }
    }
}
