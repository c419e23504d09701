//! Spectrum and covariate types plus the preprocessing applied before
//! any model sees them.

mod preprocess;
mod types;

pub use preprocess::{
    assemble_student_input, default_drop_indices, drop_bands, minmax_normalize,
    split_student_input, tile_crop, Scene, Standardizer,
};
pub use types::{AncillaryFeatures, FtirSpectrum, LabeledSample, Location, SatelliteSpectrum};

/// Laboratory FTIR channels.
pub const FTIR_BANDS: usize = 1765;
/// Raw satellite hyperspectral channels.
pub const SAT_RAW_BANDS: usize = 224;
/// Satellite channels left after dropping the unusable ones.
pub const SAT_BANDS: usize = 218;
/// Width of the shared latent space.
pub const EMBED_DIM: usize = 64;
pub const ANCILLARY_DIM: usize = 8;
/// Spectral embedding followed by ancillary covariates.
pub const STUDENT_INPUT_DIM: usize = EMBED_DIM + ANCILLARY_DIM;
/// Upper end of the label range, dS/m.
pub const SALINITY_LABEL_MAX: f64 = 90.0;
/// Side length of square scene tiles, pixels.
pub const TILE: usize = 64;
