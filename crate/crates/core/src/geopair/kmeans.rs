use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::numerics::rng;
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<[f64; 2]>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (x, y) = (a[0] - b[0], a[1] - b[1]);
    x * x + y * y
}

/// Index of the closest centroid; ties go to the lower index.
pub fn nearest_centroid(centroids: &[[f64; 2]], p: [f64; 2]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(*c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

impl KMeans {
    pub fn predict(&self, p: [f64; 2]) -> usize {
        nearest_centroid(&self.centroids, p)
    }
}

/// Lloyd iterations from k-means++ seeding, on planar `(lat, lon)`.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(alloc::format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut r = rng::stream(seed, rng::streams::SPLIT);
    let mut centroids = vec![points[r.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(*p, centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(&mut r),
            Err(_) => r.random_range(0..points.len()),
        };
        centroids.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(*p, points[next]));
        }
    }

    let mut assignment = vec![0; points.len()];
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest_centroid(&centroids, *p);
        }
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignment.iter().zip(points) {
            sums[*a][0] += p[0];
            sums[*a][1] += p[1];
            counts[*a] += 1;
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let c = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            shift = shift.max(dist2(c, centroids[j]).sqrt());
            centroids[j] = c;
        }
        if shift < TOLERANCE {
            break;
        }
    }
    for (a, p) in assignment.iter_mut().zip(points) {
        *a = nearest_centroid(&centroids, *p);
    }
    Ok(KMeans {
        centroids,
        assignment,
        iterations,
    })
}
