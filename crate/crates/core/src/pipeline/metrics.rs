//! Regression metrics on the salinity scale.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geopair::stratum;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// MAE, RMSE, and R² with the total sum of squares about the label mean.
pub fn evaluate(preds: &[f64], labels: &[f64]) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::shape("prediction and label counts differ"));
    }
    if labels.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let (mut abs, mut sse, mut sst) = (0.0, 0.0, 0.0);
    for (p, y) in preds.iter().zip(labels) {
        let e = p - y;
        abs += e.abs();
        sse += e * e;
        sst += (y - mean) * (y - mean);
    }
    if sst == 0.0 {
        return Err(Error::degenerate("R² is undefined for constant labels"));
    }
    Ok(Metrics {
        mae: abs / n,
        rmse: (sse / n).sqrt(),
        r2: 1.0 - sse / sst,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub stratum: usize,
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Absent when the stratum's labels are constant (the zero stratum always is).
    pub r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub overall: Metrics,
    pub strata: Vec<StratumMetrics>,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn new(
        split: &str,
        preds: &[f64],
        labels: &[f64],
        seed: u64,
        config_hash: &str,
    ) -> Result<Self> {
        let overall = evaluate(preds, labels)?;
        let mut strata = Vec::new();
        for s in 0..4 {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| stratum(labels[i]) == s)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let p: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
            let n = idx.len() as f64;
            let mae = p.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            let rmse = (p
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n)
                .sqrt();
            strata.push(StratumMetrics {
                stratum: s,
                count: idx.len(),
                mae,
                rmse,
                r2: evaluate(&p, &y).ok().map(|m| m.r2),
            });
        }
        Ok(Self {
            split: split.into(),
            overall,
            strata,
            seed,
            config_hash: config_hash.into(),
        })
    }
}

/// Hex SHA-256 of a canonical configuration string; the first 16 digits.
pub fn config_hash(canonical: &str) -> String {
    let d = Sha256::digest(canonical.as_bytes());
    let mut s = String::with_capacity(16);
    for b in &d[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}
