use core::f64::consts::{FRAC_PI_2, PI};

use alloc::format;

use crate::spectra::Location;
use crate::{Error, Result};

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
/// Default pairing threshold as a central angle, about 1 km on the ground.
pub const TAU: f64 = 0.000157;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoPoint {
    pub lat_rad: f64,
    pub lon_rad: f64,
}

impl GeoPoint {
    pub fn new(lat_rad: f64, lon_rad: f64) -> Result<Self> {
        if !(lat_rad.is_finite() && lon_rad.is_finite())
            || lat_rad.abs() > FRAC_PI_2
            || lon_rad.abs() > PI
        {
            return Err(Error::invalid(format!(
                "invalid point ({lat_rad}, {lon_rad}) rad"
            )));
        }
        Ok(Self { lat_rad, lon_rad })
    }

    pub fn from_degrees(lat: f64, lon: f64) -> Result<Self> {
        Self::new(lat.to_radians(), lon.to_radians())
    }

    pub fn from_location(loc: &Location) -> Result<Self> {
        Self::from_degrees(loc.lat, loc.lon)
    }

    pub fn to_unit_vector(self) -> [f64; 3] {
        let (sl, cl) = self.lat_rad.sin_cos();
        let (so, co) = self.lon_rad.sin_cos();
        [cl * co, cl * so, sl]
    }

    /// Inverse of [`GeoPoint::to_unit_vector`] after normalizing `v`.
    /// `None` for the zero vector.
    pub fn from_vector(v: [f64; 3]) -> Option<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n > 1e-12) {
            return None;
        }
        let z = (v[2] / n).clamp(-1.0, 1.0);
        Some(Self {
            lat_rad: z.asin(),
            lon_rad: v[1].atan2(v[0]),
        })
    }
}

/// Great-circle central angle between two points, radians.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let dlat = b.lat_rad - a.lat_rad;
    let dlon = b.lon_rad - a.lon_rad;
    let s1 = (dlat * 0.5).sin();
    let s2 = (dlon * 0.5).sin();
    let h = s1 * s1 + a.lat_rad.cos() * b.lat_rad.cos() * s2 * s2;
    2.0 * h.clamp(0.0, 1.0).sqrt().asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let o = GeoPoint::new(0.0, 0.0).unwrap();
        assert_eq!(haversine(o, o), 0.0);
        assert!((haversine(o, GeoPoint::new(0.0, PI).unwrap()) - PI).abs() < 1e-15);
        let d = haversine(o, GeoPoint::new(0.0, TAU).unwrap());
        assert!((d - TAU).abs() < 1e-15);
        assert!((d * EARTH_RADIUS_KM - 1.0).abs() < 0.01);
        assert!(GeoPoint::new(2.0, 0.0).is_err());
    }

    #[test]
    fn unit_vector_round_trip() {
        let p = GeoPoint::from_degrees(37.5, -120.25).unwrap();
        let q = GeoPoint::from_vector(p.to_unit_vector()).unwrap();
        assert!(haversine(p, q) < 1e-12);
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-FRAC_PI_2..FRAC_PI_2, -PI..PI).prop_map(|(a, b)| GeoPoint::new(a, b).unwrap())
    }

    proptest! {
        #[test]
        fn metric_axioms(a in point(), b in point(), c in point()) {
            let ab = haversine(a, b);
            prop_assert!((ab - haversine(b, a)).abs() < 1e-12);
            prop_assert!((0.0..=PI + 1e-12).contains(&ab));
            prop_assert!(haversine(a, a) == 0.0);
            prop_assert!(haversine(a, c) <= ab + haversine(b, c) + 1e-9);
        }
    }
}
