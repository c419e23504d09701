use alloc::vec::Vec;

use super::balltree::BallTree;
use super::point::{GeoPoint, TAU};
use crate::spectra::{FtirSpectrum, SatelliteSpectrum};
use crate::Result;

/// Indices of a matched laboratory/satellite pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairIndex {
    pub ftir: usize,
    pub sat: usize,
    pub distance_rad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub ftir: FtirSpectrum,
    pub sat: SatelliteSpectrum,
    pub distance_rad: f64,
}

/// Matches every laboratory point to its nearest satellite point and keeps
/// the match when the central angle is at most `tau`.
pub fn make_pairs(ftir: &[GeoPoint], sat: &[GeoPoint], tau: f64) -> Vec<PairIndex> {
    let Ok(tree) = BallTree::build(sat) else {
        return Vec::new();
    };
    ftir.iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, d) = tree.nearest(*p);
            (d <= tau).then_some(PairIndex {
                ftir: i,
                sat: j,
                distance_rad: d,
            })
        })
        .collect()
}

/// [`make_pairs`] over spectra. Candidates that fail validation (missing
/// bands, non-finite values, invalid coordinates) never enter the pool.
pub fn pair_spectra(
    ftir: &[FtirSpectrum],
    sat: &[SatelliteSpectrum],
    tau: Option<f64>,
) -> Result<Vec<PairedSample>> {
    let valid_f: Vec<usize> = (0..ftir.len())
        .filter(|&i| ftir[i].validate().is_ok())
        .collect();
    let valid_s: Vec<usize> = (0..sat.len())
        .filter(|&i| sat[i].validate().is_ok())
        .collect();
    let fp = valid_f
        .iter()
        .map(|&i| GeoPoint::from_location(&ftir[i].location))
        .collect::<Result<Vec<_>>>()?;
    let sp = valid_s
        .iter()
        .map(|&i| GeoPoint::from_location(&sat[i].location))
        .collect::<Result<Vec<_>>>()?;
    Ok(make_pairs(&fp, &sp, tau.unwrap_or(TAU))
        .into_iter()
        .map(|p| PairedSample {
            ftir: ftir[valid_f[p.ftir]].clone(),
            sat: sat[valid_s[p.sat]].clone(),
            distance_rad: p.distance_rad,
        })
        .collect())
}
