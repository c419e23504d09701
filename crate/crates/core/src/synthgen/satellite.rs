use alloc::vec::Vec;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::WorldConfig;
use super::gaussian;
use super::world::{response, SoilState, FACTORS};
use crate::spectra::{Location, SatelliteSpectrum, SAT_BANDS, SAT_RAW_BANDS};
use crate::Result;

/// Points of the fine wavelength grid that is averaged down to the sensor
/// channels.
pub const FINE_GRID: usize = 4 * SAT_RAW_BANDS;

/// Per-scene nuisance effects.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distortion {
    pub gain: f64,
    pub tilt: f64,
    /// Column water vapor scale of the transmittance model.
    pub water_vapor: f64,
    pub vegetation_fraction: f64,
}

impl Distortion {
    pub const NONE: Distortion = Distortion {
        gain: 1.0,
        tilt: 0.0,
        water_vapor: 0.0,
        vegetation_fraction: 0.0,
    };
}

/// Surface reflectance renderer on the unit wavelength axis
/// (0 = 420 nm, 1 = 2450 nm).
#[derive(Clone, Debug)]
pub struct SatModel {
    t: Vec<f64>,
    base: Vec<f64>,
    factors: Vec<Vec<f64>>,
    clay: Vec<f64>,
    sand: Vec<f64>,
    salt: Vec<f64>,
    vegetation: Vec<f64>,
    water: Vec<f64>,
    response_scale: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SatModel {
    pub fn new(cfg: &WorldConfig) -> Self {
        let t: Vec<f64> = (0..FINE_GRID)
            .map(|j| (j as f64 + 0.5) / FINE_GRID as f64)
            .collect();
        let map = |f: &dyn Fn(f64) -> f64| t.iter().map(|x| f(*x)).collect::<Vec<f64>>();
        let base = map(&|x| 0.22 + 0.18 * x - 0.05 * x * x);
        let factors = (1..=FACTORS)
            .map(|k| map(&|x| 0.02 * (k as f64 * core::f64::consts::PI * x + 0.7 * k as f64).cos()))
            .collect();
        // broad clay darkening overlaps the salt brightening in the VNIR;
        // the 2200 nm clay absorption is the only clay-specific cue
        let clay = map(&|x| -0.07 * gaussian(x, 0.22, 0.13) - 0.05 * gaussian(x, 0.88, 0.012));
        let sand = map(&|x| 0.06 * (0.5 + 0.5 * x));
        let salt = map(&|x| 0.035 * gaussian(x, 0.20, 0.12) - 0.025 * gaussian(x, 0.655, 0.02));
        let vegetation = map(&|x| {
            0.05 + 0.04 * gaussian(x, 0.07, 0.02) + 0.4 * sigmoid((x - 0.15) / 0.01)
                - 0.25 * gaussian(x, 0.5, 0.05)
                - 0.2 * gaussian(x, 0.75, 0.06)
        });
        let water = map(&|x| {
            0.3 * gaussian(x, 0.256, 0.008)
                + 0.5 * gaussian(x, 0.355, 0.010)
                + 2.0 * gaussian(x, 0.483, 0.020)
                + 2.5 * gaussian(x, 0.729, 0.025)
        });
        Self {
            t,
            base,
            factors,
            clay,
            sand,
            salt,
            vegetation,
            water,
            response_scale: cfg.response_scale,
        }
    }

    /// Fine-grid surface reflectance of a bare soil.
    pub fn latent_reflectance(&self, s: f64, soil: &SoilState) -> Vec<f64> {
        let r = response(s, self.response_scale);
        (0..FINE_GRID)
            .map(|j| {
                let mut v = self.base[j]
                    + soil.clay * self.clay[j]
                    + soil.sand * self.sand[j]
                    + r * self.salt[j];
                for k in 0..FACTORS {
                    v += soil.factors[k] * self.factors[k][j];
                }
                v
            })
            .collect()
    }

    /// Averages consecutive groups of four fine points into sensor channels.
    pub fn band_average(fine: &[f64]) -> Vec<f64> {
        fine.chunks_exact(FINE_GRID / SAT_RAW_BANDS)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn sample_distortion<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Distortion {
        let gain = rng.random_range(0.9..1.1);
        let tilt = 0.02 * rng.sample::<f64, _>(StandardNormal);
        let water_vapor = rng.random_range(0.2..0.8);
        let vegetation_fraction = rng.random_range(0.0..=cfg.max_vegetation_fraction);
        Distortion {
            gain: if cfg.distortion { gain } else { 1.0 },
            tilt: if cfg.distortion { tilt } else { 0.0 },
            water_vapor: if cfg.distortion { water_vapor } else { 0.0 },
            vegetation_fraction: if cfg.mixed_pixels {
                vegetation_fraction
            } else {
                0.0
            },
        }
    }

    /// Noise-free at-sensor reflectance in sensor channels.
    pub fn observe(&self, s: f64, soil: &SoilState, d: &Distortion) -> Vec<f64> {
        let surface = self.latent_reflectance(s, soil);
        let fine: Vec<f64> = (0..FINE_GRID)
            .map(|j| {
                let mixed = (1.0 - d.vegetation_fraction) * surface[j]
                    + d.vegetation_fraction * self.vegetation[j];
                let transmittance = (-d.water_vapor * self.water[j]).exp();
                d.gain * transmittance * mixed + d.tilt * (self.t[j] - 0.5)
            })
            .collect();
        Self::band_average(&fine)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn generate<R: Rng>(
        &self,
        cfg: &WorldConfig,
        s: f64,
        soil: &SoilState,
        loc: Location,
        date: NaiveDate,
        rng: &mut R,
    ) -> Result<(SatelliteSpectrum, Distortion)> {
        let d = Self::sample_distortion(cfg, rng);
        let mut x = self.observe(s, soil, &d);
        for (j, v) in x.iter_mut().enumerate() {
            let sigma = if j >= SAT_BANDS {
                cfg.sigma_sat * cfg.edge_noise_factor
            } else {
                cfg.sigma_sat
            };
            let e: f64 = rng.sample(StandardNormal);
            *v += sigma * e;
        }
        Ok((SatelliteSpectrum::new(x, loc, date)?, d))
    }
}
