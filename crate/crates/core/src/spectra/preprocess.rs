use alloc::format;
use alloc::vec::Vec;

use super::types::{AncillaryFeatures, SatelliteSpectrum};
use super::{ANCILLARY_DIM, EMBED_DIM, SAT_BANDS, SAT_RAW_BANDS, STUDENT_INPUT_DIM};
use crate::{Error, Result};

/// The six highest-index channels, dropped by default.
pub fn default_drop_indices() -> Vec<usize> {
    (SAT_BANDS..SAT_RAW_BANDS).collect()
}

/// Removes the listed channels, keeping the survivors in order.
pub fn drop_bands(s: &SatelliteSpectrum, drop: &[usize]) -> Result<SatelliteSpectrum> {
    if drop.is_empty() {
        return Ok(s.clone());
    }
    let n = s.reflectance.len();
    if n != SAT_RAW_BANDS {
        return Err(Error::shape(format!(
            "band dropping expects {SAT_RAW_BANDS} bands, got {n}"
        )));
    }
    let mut mask = alloc::vec![false; n];
    for &i in drop {
        if i >= n {
            return Err(Error::invalid(format!(
                "drop index {i} out of range for {n} bands"
            )));
        }
        if mask[i] {
            return Err(Error::invalid(format!("drop index {i} listed twice")));
        }
        mask[i] = true;
    }
    if n - drop.len() != SAT_BANDS {
        return Err(Error::invalid(format!(
            "dropping {} bands leaves {}, expected {SAT_BANDS}",
            drop.len(),
            n - drop.len()
        )));
    }
    let reflectance = s
        .reflectance
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| !m)
        .map(|(v, _)| *v)
        .collect();
    Ok(SatelliteSpectrum {
        reflectance,
        ..s.clone()
    })
}

/// Per-spectrum min-max scaling to `[0, 1]`.
pub fn minmax_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("cannot normalize non-finite values"));
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.len() < 2 || !(hi > lo) {
        return Err(Error::degenerate("spectrum has a degenerate value range"));
    }
    let span = hi - lo;
    Ok(v.iter()
        .map(|x| {
            if *x == lo {
                0.0
            } else if *x == hi {
                1.0
            } else {
                (x - lo) / span
            }
        })
        .collect())
}

/// Row-major 2-D grid of pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<T>,
}

impl<T: Clone> Scene<T> {
    pub fn new(height: usize, width: usize, cells: Vec<T>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::shape(format!(
                "{} cells for a {height}x{width} scene",
                cells.len()
            )));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.cells[r * self.width + c]
    }
}

/// Non-overlapping `tile x tile` crops in row-major order; ragged margins
/// are discarded.
pub fn tile_crop<T: Clone>(scene: &Scene<T>, tile: usize) -> Result<Vec<Scene<T>>> {
    if tile == 0 || scene.height < tile || scene.width < tile {
        return Err(Error::invalid(format!(
            "{}x{} scene is smaller than one {tile}x{tile} tile",
            scene.height, scene.width
        )));
    }
    let mut out = Vec::with_capacity((scene.height / tile) * (scene.width / tile));
    for tr in 0..scene.height / tile {
        for tc in 0..scene.width / tile {
            let mut cells = Vec::with_capacity(tile * tile);
            for r in tr * tile..(tr + 1) * tile {
                let start = r * scene.width + tc * tile;
                cells.extend_from_slice(&scene.cells[start..start + tile]);
            }
            out.push(Scene {
                height: tile,
                width: tile,
                cells,
            });
        }
    }
    Ok(out)
}

/// `[z; a]`: embedding in columns 0..64, covariates in 64..72.
pub fn assemble_student_input(
    z: &[f64],
    a: &AncillaryFeatures,
) -> Result<[f64; STUDENT_INPUT_DIM]> {
    if z.len() != EMBED_DIM {
        return Err(Error::shape(format!(
            "embedding has {} values, expected {EMBED_DIM}",
            z.len()
        )));
    }
    let anc = a.to_array();
    if z.iter().chain(&anc).any(|v| !v.is_finite()) {
        return Err(Error::invalid("student input contains non-finite values"));
    }
    let mut out = [0.0; STUDENT_INPUT_DIM];
    out[..EMBED_DIM].copy_from_slice(z);
    out[EMBED_DIM..].copy_from_slice(&anc);
    Ok(out)
}

pub fn split_student_input(
    x: &[f64; STUDENT_INPUT_DIM],
) -> ([f64; EMBED_DIM], [f64; ANCILLARY_DIM]) {
    let mut z = [0.0; EMBED_DIM];
    let mut a = [0.0; ANCILLARY_DIM];
    z.copy_from_slice(&x[..EMBED_DIM]);
    a.copy_from_slice(&x[EMBED_DIM..]);
    (z, a)
}

/// Per-column z-scoring fit on training rows. Constant columns get unit
/// scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[f64], width: usize) -> Result<Self> {
        if width == 0 || rows.is_empty() || !rows.len().is_multiple_of(width) {
            return Err(Error::shape(format!(
                "{} values do not form rows of width {width}",
                rows.len()
            )));
        }
        let n = (rows.len() / width) as f64;
        let mut mean = alloc::vec![0.0; width];
        for r in rows.chunks_exact(width) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = alloc::vec![0.0; width];
        for r in rows.chunks_exact(width) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn identity(width: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; width],
            scale: alloc::vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_in_place(&self, rows: &mut [f64]) {
        for r in rows.chunks_exact_mut(self.width()) {
            for ((v, m), s) in r.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::Location;
    use alloc::vec;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn sat(values: Vec<f64>) -> SatelliteSpectrum {
        SatelliteSpectrum::new(
            values,
            Location::new(0.0, 0.0).unwrap(),
            NaiveDate::from_ymd_opt(2023, 5, 4).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn drop_bands_examples() {
        let ramp: Vec<f64> = (0..SAT_RAW_BANDS).map(|i| i as f64).collect();
        let s = sat(ramp.clone());
        assert_eq!(
            drop_bands(&s, &default_drop_indices())
                .unwrap()
                .reflectance
                .len(),
            SAT_BANDS
        );
        assert_eq!(drop_bands(&s, &[]).unwrap(), s);
        let out = drop_bands(&s, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(out.reflectance[0], 6.0);
        let expected: Vec<f64> = ramp.into_iter().filter(|v| *v >= 6.0).collect();
        assert_eq!(out.reflectance, expected);
        assert!(drop_bands(&s, &[0, 0, 1, 2, 3, 4]).is_err());
        assert!(drop_bands(&s, &[0, 1, 2, 3, 4, 224]).is_err());
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), [0.0, 0.5, 1.0]);
        let ramp: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let out = minmax_normalize(&ramp).unwrap();
        for (a, b) in out.iter().zip(&ramp) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            minmax_normalize(&[3.0; 5]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn tile_examples() {
        let scene = |h: usize, w: usize| Scene::new(h, w, (0..h * w).collect::<Vec<_>>()).unwrap();
        assert_eq!(tile_crop(&scene(128, 128), TILE_SIDE).unwrap().len(), 4);
        let one = scene(64, 64);
        assert_eq!(tile_crop(&one, TILE_SIDE).unwrap(), vec![one.clone()]);
        let s = scene(130, 70);
        let tiles = tile_crop(&s, TILE_SIDE).unwrap();
        assert_eq!(tiles.len(), 130 / 64);
        assert_eq!(*tiles[1].get(0, 0), *s.get(64, 0));
        assert!(tile_crop(&scene(10, 100), TILE_SIDE).is_err());
    }

    const TILE_SIDE: usize = crate::spectra::TILE;

    #[test]
    fn student_input_layout() {
        let zero =
            assemble_student_input(&[0.0; EMBED_DIM], &AncillaryFeatures::default()).unwrap();
        assert_eq!(zero, [0.0; STUDENT_INPUT_DIM]);
        let z: Vec<f64> = (0..EMBED_DIM).map(|i| i as f64 * 0.5 - 3.0).collect();
        let a =
            AncillaryFeatures::from_slice(&[0.3, 0.2, -1.0, 30.0, 12.0, 0.0, 80.0, 20.0]).unwrap();
        let x = assemble_student_input(&z, &a).unwrap();
        assert_eq!(&x[..EMBED_DIM], &z[..]);
        let (z2, a2) = split_student_input(&x);
        assert_eq!(&z2[..], &z[..]);
        assert_eq!(a2, a.to_array());
        let mut bad = z.clone();
        bad[3] = f64::INFINITY;
        assert!(assemble_student_input(&bad, &a).is_err());
    }

    #[test]
    fn standardizer_zero_mean_unit_scale() {
        let rows = [1.0, 10.0, 3.0, 10.0, 5.0, 10.0];
        let st = Standardizer::fit(&rows, 2).unwrap();
        let mut t = rows;
        st.transform_in_place(&mut t);
        assert!((t[0] + t[2] + t[4]).abs() < 1e-12);
        assert_eq!(t[1], 0.0);
    }

    proptest! {
        #[test]
        fn minmax_matches_formula(v in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(hi > lo);
            let out = minmax_normalize(&v).unwrap();
            for (o, x) in out.iter().zip(&v) {
                prop_assert!((o - (x - lo) / (hi - lo)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(o));
            }
            let again = minmax_normalize(&out).unwrap();
            for (a, b) in again.iter().zip(&out) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn tile_count_is_floor_product(h in 64usize..300, w in 64usize..300) {
            let s = Scene::new(h, w, alloc::vec![0u8; h * w]).unwrap();
            prop_assert_eq!(tile_crop(&s, 64).unwrap().len(), (h / 64) * (w / 64));
        }
    }
}
