//! Haversine pairing of laboratory and satellite samples, and spatially
//! blocked dataset splits.

mod balltree;
mod kmeans;
mod pairing;
mod point;
mod split;

pub use balltree::BallTree;
pub use kmeans::{kmeans, KMeans};
pub use pairing::{make_pairs, pair_spectra, PairIndex, PairedSample};
pub use point::{haversine, GeoPoint, EARTH_RADIUS_KM, TAU};
pub use split::{
    leakage_audit, spatial_split, stratum, undersample_zeros, Split, SplitAssignment, SplitConfig,
};
