//! Seeded generator of paired laboratory and satellite spectra with known
//! ground truth.
//!
//! Every sample owns a soil state (four smooth latent factors plus clay and
//! sand fractions) and a salinity value. Both modalities are rendered from
//! the same state, so the laboratory and satellite views of a site agree
//! up to instrument effects. Ancillary covariates drive the salinity
//! distribution, which makes them informative without revealing the label.

mod config;
mod dataset;
mod ftir;
mod satellite;
mod world;

pub use config::WorldConfig;
pub use dataset::{gen_dataset, Dataset, GroundTruth};
pub use ftir::FtirModel;
pub use satellite::{Distortion, SatModel, FINE_GRID};
pub use world::{
    ancillary_at, inverse_response, response, salinity_shift, sample_salinity,
    sample_salinity_shifted, sample_soil, SoilState, FACTORS,
};

pub(crate) fn gaussian(t: f64, center: f64, width: f64) -> f64 {
    let z = (t - center) / width;
    (-0.5 * z * z).exp()
}
