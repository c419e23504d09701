use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::EncoderLayerConfig;
use crate::spectra::{default_drop_indices, EMBED_DIM, FTIR_BANDS, SAT_BANDS};
use crate::{Error, Result};

/// Divergence used to pull the two views together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentKind {
    Cosine,
    Kl,
    Js,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SauConfig {
    pub ftir_bands: usize,
    pub sat_bands: usize,
    pub latent_dim: usize,
    pub ftir_hidden: Vec<usize>,
    pub sat_hidden: Vec<usize>,
    pub dropout: f64,
    /// Residual transformer stage applied to both paths before the shared
    /// projection.
    pub refine: bool,
    pub refine_layers: usize,
    pub refine_heads: usize,
    pub refine_head_dim: usize,
    pub refine_ffn: usize,
    /// Number of patches the latent is cut into (64 gives scalar tokens).
    pub refine_tokens: usize,
    pub refine_dropout: f64,
    pub alpha_init: f64,
    pub beta_init: f64,
    pub learnable_weights: bool,
    pub alignment: AlignmentKind,
    pub l2_normalize: bool,
    pub freeze_ftir_in_alignment: bool,
    /// Keep training the satellite decoder during alignment, on a latent
    /// detached from the encoder.
    pub aux_decoder: bool,
    pub drop_bands: Vec<usize>,
}

impl Default for SauConfig {
    fn default() -> Self {
        Self {
            ftir_bands: FTIR_BANDS,
            sat_bands: SAT_BANDS,
            latent_dim: EMBED_DIM,
            ftir_hidden: alloc::vec![1024, 512, 256],
            sat_hidden: alloc::vec![256, 128],
            dropout: 0.2,
            refine: true,
            refine_layers: 3,
            refine_heads: 4,
            refine_head_dim: 32,
            refine_ffn: 128,
            refine_tokens: 64,
            refine_dropout: 0.1,
            alpha_init: 1.0,
            beta_init: 1.0,
            learnable_weights: true,
            alignment: AlignmentKind::Cosine,
            l2_normalize: true,
            freeze_ftir_in_alignment: true,
            aux_decoder: true,
            drop_bands: default_drop_indices(),
        }
    }
}

impl SauConfig {
    pub fn refine_layer(&self) -> EncoderLayerConfig {
        EncoderLayerConfig {
            model_dim: self.refine_heads * self.refine_head_dim,
            head_count: self.refine_heads,
            per_head_dim: self.refine_head_dim,
            ffn_dim: self.refine_ffn,
            dropout_rate: self.refine_dropout,
        }
    }

    pub fn ftir_widths(&self) -> Vec<usize> {
        let mut w = alloc::vec![self.ftir_bands];
        w.extend(&self.ftir_hidden);
        w.push(self.latent_dim);
        w
    }

    pub fn sat_widths(&self) -> Vec<usize> {
        let mut w = alloc::vec![self.sat_bands];
        w.extend(&self.sat_hidden);
        w.push(self.latent_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.ftir_bands == 0 || self.sat_bands == 0 {
            return Err(Error::config("SAU widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.alpha_init > 0.0 && self.beta_init >= 0.0) {
            return Err(Error::config(
                "alpha must start positive and beta nonnegative",
            ));
        }
        if self.refine {
            self.refine_layer().validate()?;
            if self.refine_tokens == 0 || !self.latent_dim.is_multiple_of(self.refine_tokens) {
                return Err(Error::config(format!(
                    "{} refinement tokens do not divide the {}-d latent",
                    self.refine_tokens, self.latent_dim
                )));
            }
        }
        Ok(())
    }
}
