//! Plain (non-tape) numeric functions.

use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::{Error, Result};

/// Lower bound of the salinity output range, dS/m.
pub const SALINITY_MIN: f64 = 0.05;
/// Upper bound of the salinity output range, dS/m.
pub const SALINITY_MAX: f64 = 90.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `lo + (hi - lo) * sigmoid(z)`.
pub fn scaled_sigmoid(z: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(z)
}

/// Exp-normalize with max subtraction.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax of non-finite entries"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / total).collect())
}

/// Standard sine/cosine positional table: even columns `sin(pos / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn sinusoidal_positional_encoding(seq_len: usize, model_dim: usize) -> Result<Tensor> {
    if seq_len == 0 {
        return Err(Error::invalid(
            "positional encoding needs at least one position",
        ));
    }
    if model_dim == 0 || !model_dim.is_multiple_of(2) {
        return Err(Error::invalid(
            "positional encoding needs an even model width",
        ));
    }
    let mut data = Vec::with_capacity(seq_len * model_dim);
    for pos in 0..seq_len {
        for i in 0..model_dim / 2 {
            let freq = (10000.0f64).powf(-((2 * i) as f64) / model_dim as f64);
            let angle = pos as f64 * freq;
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(&[seq_len, model_dim], data)
}
