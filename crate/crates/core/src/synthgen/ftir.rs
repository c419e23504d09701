use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::WorldConfig;
use super::gaussian;
use super::world::{inverse_response, response, SoilState, FACTORS};
use crate::numerics::linalg::solve_spd;
use crate::spectra::{FtirSpectrum, Location, FTIR_BANDS, SALINITY_LABEL_MAX};
use crate::Result;

const OFFSET: f64 = 0.6;
const FACTOR_SCALE: f64 = 0.08;
const CLAY_AMPLITUDE: f64 = 0.5;
const SAND_AMPLITUDE: f64 = 0.4;

/// Laboratory absorbance renderer. Baseline and salinity shapes are fixed,
/// so the noiseless spectrum is linear in
/// `(1, factors, clay, sand, response(s))`.
#[derive(Clone, Debug)]
pub struct FtirModel {
    /// Unscaled basis vectors: offset, factors, clay, sand, salinity.
    basis: Vec<Vec<f64>>,
    gram: Vec<f64>,
    diagnostic: [usize; 3],
    response_scale: f64,
    sigma: f64,
}

impl FtirModel {
    pub fn new(cfg: &WorldConfig) -> Self {
        let t: Vec<f64> = (0..FTIR_BANDS)
            .map(|j| j as f64 / (FTIR_BANDS - 1) as f64)
            .collect();
        let mut basis = Vec::with_capacity(FACTORS + 4);
        basis.push(alloc::vec![1.0; FTIR_BANDS]);
        for k in 1..=FACTORS {
            basis.push(
                t.iter()
                    .map(|x| (k as f64 * core::f64::consts::PI * x).cos())
                    .collect(),
            );
        }
        basis.push(t.iter().map(|x| gaussian(*x, 0.30, 0.025)).collect());
        basis.push(t.iter().map(|x| gaussian(*x, 0.62, 0.020)).collect());
        basis.push(
            t.iter()
                .map(|x| {
                    (0..3)
                        .map(|k| {
                            cfg.peak_amplitudes[k]
                                * gaussian(*x, cfg.peak_centers[k], cfg.peak_widths[k])
                        })
                        .sum()
                })
                .collect(),
        );
        let m = basis.len();
        let mut gram = alloc::vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                gram[i * m + j] = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            }
        }
        let diagnostic = cfg
            .peak_centers
            .map(|c| (c * (FTIR_BANDS - 1) as f64).round() as usize);
        Self {
            basis,
            gram,
            diagnostic,
            response_scale: cfg.response_scale,
            sigma: cfg.sigma_lab,
        }
    }

    fn coefficients(soil: &SoilState, r: f64) -> [f64; FACTORS + 4] {
        let mut c = [0.0; FACTORS + 4];
        c[0] = OFFSET;
        for k in 0..FACTORS {
            c[1 + k] = FACTOR_SCALE * soil.factors[k];
        }
        c[FACTORS + 1] = CLAY_AMPLITUDE * soil.clay;
        c[FACTORS + 2] = SAND_AMPLITUDE * soil.sand;
        c[FACTORS + 3] = r;
        c
    }

    fn render(&self, c: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; FTIR_BANDS];
        for (b, w) in self.basis.iter().zip(c) {
            for (o, v) in out.iter_mut().zip(b) {
                *o += w * v;
            }
        }
        out
    }

    /// Salinity-free absorbance of a soil.
    pub fn baseline(&self, soil: &SoilState) -> Vec<f64> {
        self.render(&Self::coefficients(soil, 0.0))
    }

    pub fn noiseless(&self, s: f64, soil: &SoilState) -> Vec<f64> {
        self.render(&Self::coefficients(soil, response(s, self.response_scale)))
    }

    /// Band indices at the salinity peak centers.
    pub fn diagnostic_bands(&self) -> [usize; 3] {
        self.diagnostic
    }

    /// Salinity profile value at each diagnostic band: the depth per unit
    /// of response.
    pub fn peak_gains(&self) -> [f64; 3] {
        self.diagnostic.map(|j| self.basis[FACTORS + 3][j])
    }

    pub fn generate<R: Rng>(
        &self,
        s: f64,
        loc: Location,
        soil: &SoilState,
        rng: &mut R,
    ) -> Result<FtirSpectrum> {
        let mut x = self.noiseless(s, soil);
        for v in &mut x {
            let e: f64 = rng.sample(StandardNormal);
            *v += self.sigma * e;
        }
        FtirSpectrum::new(x, loc, Some(s))
    }

    /// Closed-form salinity estimate: least squares over the known basis
    /// recovers the response coefficient, which is then inverted.
    pub fn invert(&self, absorbance: &[f64]) -> Result<f64> {
        let rhs: Vec<f64> = self
            .basis
            .iter()
            .map(|b| b.iter().zip(absorbance).map(|(a, y)| a * y).sum())
            .collect();
        let c = solve_spd(&self.gram, &rhs)?;
        Ok(inverse_response(c[FACTORS + 3].max(0.0), self.response_scale).min(SALINITY_LABEL_MAX))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::world::sample_soil;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless() -> (WorldConfig, FtirModel) {
        let cfg = WorldConfig::default().noiseless();
        let m = FtirModel::new(&cfg);
        (cfg, m)
    }

    #[test]
    fn zero_salinity_is_pure_baseline() {
        let (_, m) = noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let soil = sample_soil(&mut rng);
        let loc = Location::new(35.0, -120.0).unwrap();
        let x = m.generate(0.0, loc, &soil, &mut rng).unwrap();
        assert_eq!(x.absorbance, m.baseline(&soil));
    }

    #[test]
    fn peak_depth_increases_with_salinity() {
        let (_, m) = noiseless();
        let soil = SoilState::default();
        let base = m.baseline(&soil);
        let mut last = [0.0; 3];
        for s in [0.01, 0.1, 1.0, 5.0, 20.0, 90.0] {
            let x = m.noiseless(s, &soil);
            for (k, j) in m.diagnostic_bands().iter().enumerate() {
                let depth = x[*j] - base[*j];
                assert!(depth > last[k]);
                last[k] = depth;
            }
        }
    }

    #[test]
    fn depth_regression_recovers_response_curve() {
        let (cfg, m) = noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gains = m.peak_gains();
        let mut sxx = [0.0; 3];
        let mut sxy = [0.0; 3];
        let mut rows = Vec::new();
        for _ in 0..1000 {
            let soil = sample_soil(&mut rng);
            let s = rng.random_range(0.0..90.0);
            let x = m.noiseless(s, &soil);
            let base = m.baseline(&soil);
            let r = response(s, cfg.response_scale);
            for (k, j) in m.diagnostic_bands().iter().enumerate() {
                let depth = x[*j] - base[*j];
                sxx[k] += r * r;
                sxy[k] += r * depth;
                rows.push((k, r, depth));
            }
        }
        for k in 0..3 {
            let slope = sxy[k] / sxx[k];
            assert!((slope - gains[k]).abs() < 1e-9);
        }
        for (k, r, depth) in rows {
            assert!((depth / gains[k] - r).abs() < 1e-9);
        }
    }

    #[test]
    fn inversion_oracle_is_exact_without_noise() {
        let (_, m) = noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in [0.0, 0.3, 2.0, 14.0, 90.0] {
            let soil = sample_soil(&mut rng);
            let got = m.invert(&m.noiseless(s, &soil)).unwrap();
            assert!((got - s).abs() < 1e-6 * (1.0 + s), "{s} -> {got}");
        }
    }
}
