use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::EncoderLayerConfig;
use crate::spectra::{ANCILLARY_DIM, EMBED_DIM, STUDENT_INPUT_DIM};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub input_dim: usize,
    /// Patches the input embedding is cut into (64 gives scalar tokens).
    pub tokens: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub dropout: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            input_dim: EMBED_DIM,
            tokens: EMBED_DIM,
            model_dim: EMBED_DIM,
            layers: 3,
            heads: 4,
            ffn: 128,
            dropout: 0.1,
        }
    }
}

impl TeacherConfig {
    pub fn layer(&self) -> EncoderLayerConfig {
        EncoderLayerConfig {
            model_dim: self.model_dim,
            head_count: self.heads,
            per_head_dim: self.model_dim.checked_div(self.heads).unwrap_or(0),
            ffn_dim: self.ffn,
            dropout_rate: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layer().validate()?;
        if self.layers == 0 {
            return Err(Error::config("teacher needs at least one layer"));
        }
        if self.tokens == 0 || !self.input_dim.is_multiple_of(self.tokens) {
            return Err(Error::config(format!(
                "{} teacher tokens do not divide input width {}",
                self.tokens, self.input_dim
            )));
        }
        Ok(())
    }
}

/// Which parts of the student input reach the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInputs {
    /// Spectral embedding and ancillary features through a learned projection.
    Full,
    /// Same network, spectral embedding zeroed.
    AncillaryOnly,
    /// Spectral patches tiled to the model width with no learned projection.
    HsiOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub spectral_dim: usize,
    pub ancillary_dim: usize,
    pub tokens: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub dropout: f64,
    pub inputs: StudentInputs,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            spectral_dim: EMBED_DIM,
            ancillary_dim: ANCILLARY_DIM,
            tokens: EMBED_DIM,
            model_dim: STUDENT_INPUT_DIM,
            layers: 4,
            heads: 8,
            ffn: 256,
            dropout: 0.1,
            inputs: StudentInputs::Full,
        }
    }
}

impl StudentConfig {
    pub fn layer(&self) -> EncoderLayerConfig {
        EncoderLayerConfig {
            model_dim: self.model_dim,
            head_count: self.heads,
            per_head_dim: self.model_dim.checked_div(self.heads).unwrap_or(0),
            ffn_dim: self.ffn,
            dropout_rate: self.dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spectral_dim + self.ancillary_dim
    }

    pub fn patch(&self) -> usize {
        self.spectral_dim / self.tokens.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer().validate()?;
        if self.layers == 0 {
            return Err(Error::config("student needs at least one layer"));
        }
        if self.tokens == 0 || !self.spectral_dim.is_multiple_of(self.tokens) {
            return Err(Error::config(format!(
                "{} student tokens do not divide spectral width {}",
                self.tokens, self.spectral_dim
            )));
        }
        if self.inputs == StudentInputs::HsiOnly && !self.model_dim.is_multiple_of(self.patch()) {
            return Err(Error::config(format!(
                "patch width {} does not tile model width {}",
                self.patch(),
                self.model_dim
            )));
        }
        Ok(())
    }
}

/// Coefficients of the composite objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub layer_weights: Vec<f64>,
    pub huber_delta: f64,
    pub smooth_l1_delta: f64,
    /// Student feature columns compared against the teacher.
    pub feature_dims: usize,
}

impl Default for DistillWeights {
    fn default() -> Self {
        Self {
            alpha: 0.07,
            beta: 0.90,
            gamma: 0.10,
            layer_weights: alloc::vec![1.35, 1.05, 0.65],
            huber_delta: 1.0,
            smooth_l1_delta: 0.1,
            feature_dims: EMBED_DIM,
        }
    }
}

impl DistillWeights {
    /// Task loss only.
    pub fn task_only() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            ..Self::default()
        }
    }

    pub fn uses_teacher(&self) -> bool {
        self.beta > 0.0 || self.gamma > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.huber_delta,
            self.smooth_l1_delta,
        ];
        if all
            .iter()
            .chain(&self.layer_weights)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::config(
                "distillation weights must be finite and nonnegative",
            ));
        }
        if self.layer_weights.len() != 3 {
            return Err(Error::config(format!(
                "expected 3 layer weights, got {}",
                self.layer_weights.len()
            )));
        }
        if self.huber_delta == 0.0 || self.smooth_l1_delta == 0.0 || self.feature_dims == 0 {
            return Err(Error::config(
                "loss thresholds and feature width must be positive",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(TeacherConfig::default().validate().is_ok());
        assert_eq!(TeacherConfig::default().layers, 3);
        let s = StudentConfig::default();
        assert!(s.validate().is_ok());
        assert_eq!((s.layers, s.heads, s.input_dim()), (4, 8, 72));
        assert!(StudentConfig {
            inputs: StudentInputs::HsiOnly,
            ..s.clone()
        }
        .validate()
        .is_ok());
        assert!(StudentConfig { tokens: 5, ..s }.validate().is_err());
        let w = DistillWeights::default();
        assert!(w.validate().is_ok());
        assert!(DistillWeights {
            layer_weights: alloc::vec![1.0, 1.0],
            ..w.clone()
        }
        .validate()
        .is_err());
        assert!(DistillWeights { gamma: -0.1, ..w }.validate().is_err());
    }
}
