use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use super::config::WorldConfig;
use crate::spectra::{AncillaryFeatures, Location, SALINITY_LABEL_MAX};

/// Number of smooth latent soil factors.
pub const FACTORS: usize = 4;

/// Latent soil properties shared by both spectral views of a site.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SoilState {
    pub factors: [f64; FACTORS],
    pub clay: f64,
    pub sand: f64,
}

pub fn sample_soil<R: Rng>(rng: &mut R) -> SoilState {
    let mut factors = [0.0; FACTORS];
    for f in &mut factors {
        *f = rng.sample(StandardNormal);
    }
    let clay = rng.random_range(0.05..0.5);
    let sand = rng.random_range(0.0..(0.95 - clay));
    SoilState {
        factors,
        clay,
        sand,
    }
}

/// Spectral response to salinity, `ln(1 + s / s0)`.
pub fn response(s: f64, scale: f64) -> f64 {
    (s / scale).ln_1p()
}

pub fn inverse_response(r: f64, scale: f64) -> f64 {
    scale * r.exp_m1()
}

/// Climate covariates at a site. Temperature falls with latitude;
/// precipitation follows a smooth regional pattern.
pub fn ancillary_at<R: Rng>(
    cfg: &WorldConfig,
    loc: Location,
    soil: &SoilState,
    rng: &mut R,
) -> AncillaryFeatures {
    let mid_lat = 0.5 * (cfg.lat_range[0] + cfg.lat_range[1]);
    let u = (loc.lon - cfg.lon_range[0]) / (cfg.lon_range[1] - cfg.lon_range[0]);
    let v = (loc.lat - cfg.lat_range[0]) / (cfg.lat_range[1] - cfg.lat_range[0]);
    let n = |rng: &mut R, sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let t_mean = 18.0 - 0.9 * (loc.lat - mid_lat) + n(rng, 0.7);
    let t_min = t_mean - 9.0 + n(rng, 1.0);
    let t_max = t_mean + 11.0 + n(rng, 1.0);
    let field = (core::f64::consts::TAU * u).sin() * (core::f64::consts::PI * v).cos();
    let p_mean = (25.0 + 12.0 * field + n(rng, 2.0)).max(1.0);
    let p_min = p_mean * rng.random_range(0.05..0.3);
    let p_max = p_mean * rng.random_range(2.0..3.0);
    AncillaryFeatures {
        sand_fraction: soil.sand,
        clay_fraction: soil.clay,
        temperature_min: t_min,
        temperature_max: t_max,
        temperature_mean: t_mean,
        precipitation_min: p_min,
        precipitation_max: p_max,
        precipitation_mean: p_mean,
    }
}

/// Shift of the log-normal location: clayey, dry, warm sites hold more salt.
pub fn salinity_shift(cfg: &WorldConfig, a: &AncillaryFeatures) -> f64 {
    let z_clay = (a.clay_fraction - 0.275) / 0.13;
    let z_precip = (a.precipitation_mean - 25.0) / 8.5;
    let z_temp = (a.temperature_mean - 18.0) / 1.5;
    cfg.driver_strength * (z_clay - 0.8 * z_precip + 0.3 * z_temp)
}

pub fn sample_salinity<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> f64 {
    sample_salinity_shifted(cfg, 0.0, rng)
}

/// Zero with probability `zero_fraction` (moved on the logit scale by
/// `shift`, so salty-looking climates are less often salt-free), else a
/// clipped log-normal draw.
pub fn sample_salinity_shifted<R: Rng>(cfg: &WorldConfig, shift: f64, rng: &mut R) -> f64 {
    let zf = cfg.zero_fraction;
    let p_zero = if shift == 0.0 || zf <= 0.0 || zf >= 1.0 {
        zf
    } else {
        1.0 / (1.0 + (shift - (zf / (1.0 - zf)).ln()).exp())
    };
    let zero = rng.random::<f64>() < p_zero;
    let tail = LogNormal::new(cfg.tail_log_mean + shift, cfg.tail_log_sd).expect("positive sd");
    let s = tail.sample(rng);
    if zero {
        0.0
    } else {
        s.min(SALINITY_LABEL_MAX)
    }
}

/// A laboratory reading of true salinity `s`. Salt-free soil reads zero.
/// The draw is taken even when unused so the stream stays aligned.
pub fn measure<R: Rng>(cfg: &WorldConfig, s: f64, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(StandardNormal);
    if s == 0.0 {
        return 0.0;
    }
    (s * (cfg.label_noise * e).exp()).min(SALINITY_LABEL_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn salinity_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all_zero = WorldConfig {
            zero_fraction: 1.0,
            ..Default::default()
        };
        assert!((0..1000).all(|_| sample_salinity(&all_zero, &mut rng) == 0.0));
        let cfg = WorldConfig::default();
        let n = 100_000;
        let draws: alloc::vec::Vec<f64> = (0..n).map(|_| sample_salinity(&cfg, &mut rng)).collect();
        assert!(draws.iter().all(|s| (0.0..=90.0).contains(s)));
        let zero_share = draws.iter().filter(|s| **s == 0.0).count() as f64 / n as f64;
        assert!((zero_share - 0.48).abs() < 0.02, "{zero_share}");
        let nonzero: alloc::vec::Vec<f64> = draws.into_iter().filter(|s| *s > 0.0).collect();
        let low = nonzero.iter().filter(|s| **s < 1.0).count() as f64 / nonzero.len() as f64;
        let hot = nonzero.iter().filter(|s| **s > 10.0).count() as f64 / nonzero.len() as f64;
        assert!(low > 0.4 && hot < 0.05 && hot > 0.0);
    }

    #[test]
    fn salty_climates_are_less_often_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = WorldConfig::default();
        let share = |shift: f64, rng: &mut ChaCha8Rng| {
            (0..20_000)
                .filter(|_| sample_salinity_shifted(&cfg, shift, rng) == 0.0)
                .count() as f64
                / 20_000.0
        };
        let (dry, wet) = (share(1.5, &mut rng), share(-1.5, &mut rng));
        assert!(dry < 0.25 && wet > 0.75, "{dry} {wet}");
        // logistic symmetry about the base rate
        assert!((dry + wet - 1.0).abs() < 0.03);
    }

    #[test]
    fn response_round_trip() {
        for s in [0.0, 0.05, 1.0, 37.0, 90.0] {
            assert!((inverse_response(response(s, 1.0), 1.0) - s).abs() < 1e-12);
        }
        assert_eq!(response(1.0, 1.0), core::f64::consts::LN_2);
    }

    #[test]
    fn texture_is_a_valid_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = sample_soil(&mut rng);
            assert!(s.clay + s.sand <= 1.0 && s.clay >= 0.0 && s.sand >= 0.0);
        }
    }
}
