use alloc::format;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub sample_count: usize,
    /// Probability that a site is salt-free.
    pub zero_fraction: f64,
    /// Log-normal location of nonzero salinity before covariate shifts.
    pub tail_log_mean: f64,
    pub tail_log_sd: f64,
    /// Scale of the covariate-driven shift of the log-normal location and
    /// of the zero-salinity logit.
    pub driver_strength: f64,
    /// Salinity at which the spectral response reaches `ln 2`, dS/m.
    pub response_scale: f64,
    pub sigma_lab: f64,
    pub sigma_sat: f64,
    /// Log-scale sd of the multiplicative error of a laboratory EC reading.
    pub label_noise: f64,
    /// Noise multiplier of the unusable edge channels.
    pub edge_noise_factor: f64,
    pub lat_range: [f64; 2],
    pub lon_range: [f64; 2],
    /// Share of sites whose laboratory sample sits at the satellite site.
    pub collocated_fraction: f64,
    pub distortion: bool,
    pub mixed_pixels: bool,
    pub max_vegetation_fraction: f64,
    /// Positions of the salinity absorption peaks on the unit band axis.
    pub peak_centers: [f64; 3],
    pub peak_widths: [f64; 3],
    pub peak_amplitudes: [f64; 3],
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            sample_count: 2000,
            zero_fraction: 0.48,
            tail_log_mean: 0.0,
            tail_log_sd: 1.1,
            driver_strength: 0.8,
            response_scale: 1.0,
            sigma_lab: 0.002,
            sigma_sat: 0.03,
            label_noise: 0.3,
            edge_noise_factor: 5.0,
            lat_range: [34.0, 38.0],
            lon_range: [-122.0, -116.0],
            collocated_fraction: 1.0,
            distortion: true,
            mixed_pixels: true,
            max_vegetation_fraction: 0.3,
            peak_centers: [0.12, 0.47, 0.78],
            peak_widths: [0.008, 0.012, 0.010],
            peak_amplitudes: [0.30, 0.18, 0.24],
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("zero_fraction", self.zero_fraction)?;
        unit("collocated_fraction", self.collocated_fraction)?;
        unit("max_vegetation_fraction", self.max_vegetation_fraction)?;
        if self.sample_count == 0 {
            return Err(Error::config("sample_count must be positive"));
        }
        if !(self.sigma_lab >= 0.0 && self.sigma_sat >= self.sigma_lab) {
            return Err(Error::config(format!(
                "noise levels must satisfy sigma_sat >= sigma_lab >= 0 (got {} and {})",
                self.sigma_sat, self.sigma_lab
            )));
        }
        if !(self.label_noise >= 0.0) {
            return Err(Error::config("label_noise must be nonnegative"));
        }
        if !(self.tail_log_sd > 0.0 && self.response_scale > 0.0 && self.edge_noise_factor >= 1.0) {
            return Err(Error::config(
                "tail_log_sd and response_scale must be positive, edge_noise_factor >= 1",
            ));
        }
        let [la, lb] = self.lat_range;
        let [oa, ob] = self.lon_range;
        if !(-90.0 <= la && la < lb && lb <= 90.0 && -180.0 <= oa && oa < ob && ob <= 180.0) {
            return Err(Error::config(
                "region bounding box is empty or off the globe",
            ));
        }
        for i in 0..3 {
            if !(0.0..=1.0).contains(&self.peak_centers[i])
                || self.peak_widths[i] <= 0.0
                || self.peak_amplitudes[i] <= 0.0
            {
                return Err(Error::config(format!("salinity peak {i} is malformed")));
            }
        }
        Ok(())
    }

    /// The same world with noiseless instruments and labels, and no
    /// satellite distortion or mixing.
    pub fn noiseless(&self) -> Self {
        Self {
            sigma_lab: 0.0,
            sigma_sat: 0.0,
            label_noise: 0.0,
            distortion: false,
            mixed_pixels: false,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_checked() {
        WorldConfig::default().validate().unwrap();
        let bad = WorldConfig {
            sigma_lab: 0.1,
            sigma_sat: 0.01,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorldConfig {
            zero_fraction: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
