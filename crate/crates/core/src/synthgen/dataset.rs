use alloc::vec::Vec;

use chrono::{Days, NaiveDate};
use rand::seq::index::sample;
use rand::Rng;

use super::config::WorldConfig;
use super::ftir::FtirModel;
use super::satellite::{Distortion, SatModel};
use super::world::{
    ancillary_at, measure, salinity_shift, sample_salinity_shifted, sample_soil, SoilState,
};
use crate::geopair::{BallTree, GeoPoint, TAU};
use crate::numerics::rng;
use crate::spectra::{AncillaryFeatures, FtirSpectrum, Location, SatelliteSpectrum};
use crate::Result;

/// Generator-side facts about one site.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// True salinity, before laboratory measurement error.
    pub salinity: f64,
    pub soil: SoilState,
    pub distortion: Distortion,
    /// Whether the laboratory sample was taken at the satellite site.
    pub collocated: bool,
    /// Label and soil of the laboratory sample (equal to the site's when
    /// collocated).
    pub ftir_salinity: f64,
    pub ftir_soil: SoilState,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: WorldConfig,
    pub ftir: Vec<FtirSpectrum>,
    pub sat: Vec<SatelliteSpectrum>,
    pub ancillary: Vec<AncillaryFeatures>,
    /// Measured salinity at each satellite site, dS/m.
    pub labels: Vec<f64>,
    pub truth: Vec<GroundTruth>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

const FIRST_ACQUISITION: (i32, u32, u32) = (2023, 5, 1);

fn uniform_location<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Location {
    Location {
        lat: rng.random_range(cfg.lat_range[0]..cfg.lat_range[1]),
        lon: rng.random_range(cfg.lon_range[0]..cfg.lon_range[1]),
    }
}

/// Renders a full paired corpus. Each site draws from its own random
/// stream, so the corpus is reproducible from the seed alone.
pub fn gen_dataset(cfg: &WorldConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.sample_count;
    let lab = FtirModel::new(cfg);
    let sat_model = SatModel::new(cfg);
    let first = NaiveDate::from_ymd_opt(
        FIRST_ACQUISITION.0,
        FIRST_ACQUISITION.1,
        FIRST_ACQUISITION.2,
    )
    .expect("valid date");

    let mut placement = rng::stream(cfg.seed, rng::streams::PLACEMENT);
    let n_colloc = ((cfg.collocated_fraction * n as f64).round() as usize).min(n);
    let mut collocated = alloc::vec![false; n];
    for i in sample(&mut placement, n, n_colloc) {
        collocated[i] = true;
    }

    let mut sites = Vec::with_capacity(n);
    let mut sat = Vec::with_capacity(n);
    let mut ancillary = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(rng::mix(cfg.seed, i as u64), rng::streams::WORLD);
        let loc = uniform_location(cfg, &mut r);
        let soil = sample_soil(&mut r);
        let anc = ancillary_at(cfg, loc, &soil, &mut r);
        let s = sample_salinity_shifted(cfg, salinity_shift(cfg, &anc), &mut r);
        let date = first + Days::new(r.random_range(0..92));
        let (spec, distortion) = sat_model.generate(cfg, s, &soil, loc, date, &mut r)?;
        sites.push(GeoPoint::from_location(&loc)?);
        sat.push(spec);
        ancillary.push(anc);
        labels.push(measure(cfg, s, &mut r));
        truth.push(GroundTruth {
            salinity: s,
            soil,
            distortion,
            collocated: collocated[i],
            ftir_salinity: s,
            ftir_soil: soil,
        });
    }

    let tree = BallTree::build(&sites)?;
    let mut ftir = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(rng::mix(cfg.seed, i as u64), rng::streams::PLACEMENT);
        if collocated[i] {
            // one soil sample, one reading: both views share the label
            let mut f = lab.generate(truth[i].salinity, sat[i].location, &truth[i].soil, &mut r)?;
            f.salinity = Some(labels[i]);
            ftir.push(f);
            continue;
        }
        // a laboratory sample away from every satellite site, with its own soil
        let loc = loop {
            let cand = uniform_location(cfg, &mut r);
            if tree.nearest(GeoPoint::from_location(&cand)?).1 > TAU {
                break cand;
            }
        };
        let soil = sample_soil(&mut r);
        let anc = ancillary_at(cfg, loc, &soil, &mut r);
        let s = sample_salinity_shifted(cfg, salinity_shift(cfg, &anc), &mut r);
        let mut f = lab.generate(s, loc, &soil, &mut r)?;
        f.salinity = Some(measure(cfg, s, &mut r));
        ftir.push(f);
        truth[i].ftir_salinity = s;
        truth[i].ftir_soil = soil;
    }

    Ok(Dataset {
        config: cfg.clone(),
        ftir,
        sat,
        ancillary,
        labels,
        truth,
    })
}
