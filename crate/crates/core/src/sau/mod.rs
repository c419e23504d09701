//! Spectral adaptation unit: two encoders, one per spectral modality, that
//! meet in a shared 64-d latent space, with mirrored decoders and an
//! angular alignment objective.

mod config;
mod loss;
mod model;
mod train;

pub use config::{AlignmentKind, SauConfig};
pub use loss::{align_loss, cosine_distance, recon_loss, sau_total_loss, SauLossParts};
pub use model::{Path, SauModel};
pub use train::{finetune_align, mean_pair_cosine_distance, pretrain_ftir, recon_error, AlignData};
