//! Pure scalar/vector primitives shared by the whole pipeline.
//!
//! These are the reference implementations: the gradient tape's forward pass
//! and all oracles call into (or re-derive) exactly these definitions, so a
//! single numerical convention (max-subtracted softmax, the degenerate-norm
//! pass-through) holds everywhere.

use crate::error::{Error, Result};

use super::Tensor;

/// Default norm threshold: vectors with L2 norm below this are passed through
/// normalization unchanged instead of being divided by a near-zero value.
pub const NORM_EPS: f64 = 1e-12;

/// Numerically stable softmax: subtracts the max before exponentiating.
///
/// Rejects empty and non-finite input; output entries are in (0, 1] and sum
/// to 1 up to rounding.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::contract("softmax of empty slice"));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::contract(format!(
            "softmax input has non-finite value {} at index {i}",
            x[i]
        )));
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Logistic sigmoid, evaluated so that neither branch exponentiates a large
/// positive argument.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sum(exp(x))) with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Scales `x` to unit L2 norm when its norm is at least `eps`; otherwise
/// returns `x` unchanged with the degenerate flag set.
pub fn l2_normalize(x: &[f64], eps: f64) -> (Vec<f64>, bool) {
    assert!(eps > 0.0, "l2_normalize eps must be positive");
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < eps {
        (x.to_vec(), true)
    } else {
        (x.iter().map(|v| v / norm).collect(), false)
    }
}

/// L2-normalizes each row of a K×D matrix independently, with the same
/// degenerate guard as [`l2_normalize`]: rows with norm below `eps` pass
/// through unchanged.
pub fn intra_normalize(m: &Tensor, eps: f64) -> Tensor {
    assert_eq!(m.dims().len(), 2, "intra_normalize expects a matrix");
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (n, _) = l2_normalize(m.row(r), eps);
        out.extend_from_slice(&n);
    }
    Tensor::new(vec![rows, cols], out)
}
