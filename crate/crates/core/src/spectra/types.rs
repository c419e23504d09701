use alloc::format;
use alloc::vec::Vec;

use chrono::NaiveDate;

use super::{ANCILLARY_DIM, EMBED_DIM, FTIR_BANDS, SALINITY_LABEL_MAX, SAT_BANDS, SAT_RAW_BANDS};
use crate::{Error, Result};

/// Geographic position in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

impl Location {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let loc = Self { lat, lon };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && self.lon.is_finite())
            || self.lat.abs() > 90.0
            || self.lon.abs() > 180.0
        {
            return Err(Error::invalid(format!(
                "invalid location ({}, {})",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

fn check_label(s: f64) -> Result<()> {
    if !s.is_finite() || !(0.0..=SALINITY_LABEL_MAX).contains(&s) {
        return Err(Error::invalid(format!(
            "salinity label {s} outside [0, {SALINITY_LABEL_MAX}]"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "{name} value at band {i} is not finite"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FtirSpectrum {
    pub absorbance: Vec<f64>,
    pub location: Location,
    /// Electrical conductivity, dS/m.
    pub salinity: Option<f64>,
}

impl FtirSpectrum {
    pub fn new(absorbance: Vec<f64>, location: Location, salinity: Option<f64>) -> Result<Self> {
        let s = Self {
            absorbance,
            location,
            salinity,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.absorbance.len() != FTIR_BANDS {
            return Err(Error::shape(format!(
                "FTIR spectrum has {} bands, expected {FTIR_BANDS}",
                self.absorbance.len()
            )));
        }
        check_finite("absorbance", &self.absorbance)?;
        self.location.validate()?;
        if let Some(s) = self.salinity {
            check_label(s)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SatelliteSpectrum {
    pub reflectance: Vec<f64>,
    pub location: Location,
    pub acquisition_date: NaiveDate,
    pub normalized: bool,
}

impl SatelliteSpectrum {
    pub fn new(
        reflectance: Vec<f64>,
        location: Location,
        acquisition_date: NaiveDate,
    ) -> Result<Self> {
        let s = Self {
            reflectance,
            location,
            acquisition_date,
            normalized: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.reflectance.len();
        if n != SAT_RAW_BANDS && n != SAT_BANDS {
            return Err(Error::shape(format!(
                "satellite spectrum has {n} bands, expected {SAT_RAW_BANDS} or {SAT_BANDS}"
            )));
        }
        check_finite("reflectance", &self.reflectance)?;
        self.location.validate()?;
        if self.normalized && self.reflectance.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("normalized reflectance outside [0, 1]"));
        }
        Ok(())
    }
}

/// Soil texture and climate covariates, in the fixed column order of
/// [`AncillaryFeatures::to_array`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AncillaryFeatures {
    pub sand_fraction: f64,
    pub clay_fraction: f64,
    pub temperature_min: f64,
    pub temperature_max: f64,
    pub temperature_mean: f64,
    pub precipitation_min: f64,
    pub precipitation_max: f64,
    pub precipitation_mean: f64,
}

impl AncillaryFeatures {
    pub const NAMES: [&'static str; ANCILLARY_DIM] = [
        "sand_fraction",
        "clay_fraction",
        "temperature_min",
        "temperature_max",
        "temperature_mean",
        "precipitation_min",
        "precipitation_max",
        "precipitation_mean",
    ];

    pub fn to_array(&self) -> [f64; ANCILLARY_DIM] {
        [
            self.sand_fraction,
            self.clay_fraction,
            self.temperature_min,
            self.temperature_max,
            self.temperature_mean,
            self.precipitation_min,
            self.precipitation_max,
            self.precipitation_mean,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != ANCILLARY_DIM {
            return Err(Error::shape(format!(
                "{} ancillary values, expected {ANCILLARY_DIM}",
                v.len()
            )));
        }
        let a = Self {
            sand_fraction: v[0],
            clay_fraction: v[1],
            temperature_min: v[2],
            temperature_max: v[3],
            temperature_mean: v[4],
            precipitation_min: v[5],
            precipitation_max: v[6],
            precipitation_mean: v[7],
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("ancillary", &self.to_array())?;
        let (s, c) = (self.sand_fraction, self.clay_fraction);
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&c) || s + c > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "texture fractions sand={s} clay={c} are not a valid split"
            )));
        }
        Ok(())
    }
}

/// Adapted embedding with covariates and label, ready for the student.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub adapted_embedding: Vec<f64>,
    pub ancillary: AncillaryFeatures,
    pub salinity: f64,
    pub location: Location,
}

impl LabeledSample {
    pub fn new(
        adapted_embedding: Vec<f64>,
        ancillary: AncillaryFeatures,
        salinity: f64,
        location: Location,
    ) -> Result<Self> {
        if adapted_embedding.len() != EMBED_DIM {
            return Err(Error::shape(format!(
                "embedding has {} values, expected {EMBED_DIM}",
                adapted_embedding.len()
            )));
        }
        check_finite("embedding", &adapted_embedding)?;
        ancillary.validate()?;
        check_label(salinity)?;
        location.validate()?;
        Ok(Self {
            adapted_embedding,
            ancillary,
            salinity,
            location,
        })
    }
}
