use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, nearest_centroid};
use crate::numerics::rng;
use crate::spectra::Location;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub k: usize,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            k: 3,
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub split: Vec<Split>,
    pub cluster: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
}

impl SplitAssignment {
    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.split.len())
            .filter(|&i| self.split[i] == which)
            .collect()
    }
}

/// Salinity stratum: 0 for zero, then (0, 2], (2, 10], above 10 dS/m.
pub fn stratum(s: f64) -> usize {
    if s <= 0.0 {
        0
    } else if s <= 2.0 {
        1
    } else if s <= 10.0 {
        2
    } else {
        3
    }
}

/// Integer counts summing to `n`, each the floor or ceiling of its quota.
/// Equal remainders go to the split furthest behind by `deficit`.
fn largest_remainder(n: usize, fractions: &[f64; 3], deficit: &[f64; 3]) -> [usize; 3] {
    let quota: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = (quota[i] + 1e-9).floor() as usize;
    }
    let rem = |i: usize| ((quota[i] - counts[i] as f64) * 1e6).round();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        rem(b)
            .total_cmp(&rem(a))
            .then(deficit[b].total_cmp(&deficit[a]))
            .then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Clusters locations with k-means, then splits every (cluster, stratum)
/// group by the configured fractions.
pub fn spatial_split(
    locations: &[Location],
    labels: &[f64],
    cfg: &SplitConfig,
) -> Result<SplitAssignment> {
    if locations.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} locations but {} labels",
            locations.len(),
            labels.len()
        )));
    }
    let total: f64 = cfg.fractions.iter().sum();
    if cfg.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {:?} must be in [0, 1] and sum to 1",
            cfg.fractions
        )));
    }
    let points: Vec<[f64; 2]> = locations.iter().map(|l| [l.lat, l.lon]).collect();
    let km = kmeans(&points, cfg.k, cfg.seed)?;

    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, (c, s)) in km.assignment.iter().zip(labels).enumerate() {
        groups.entry((*c, stratum(*s))).or_default().push(i);
    }
    let mut r = rng::stream(rng::mix(cfg.seed, 1), rng::streams::SPLIT);
    let mut split = alloc::vec![Split::Train; locations.len()];
    // per cluster: samples seen and assigned per split, to balance ties
    let mut seen = alloc::vec![0usize; cfg.k];
    let mut given = alloc::vec![[0usize; 3]; cfg.k];
    for (&(c, _), members) in groups.iter_mut() {
        members.shuffle(&mut r);
        seen[c] += members.len();
        let deficit: [f64; 3] =
            core::array::from_fn(|i| cfg.fractions[i] * seen[c] as f64 - given[c][i] as f64);
        let counts = largest_remainder(members.len(), &cfg.fractions, &deficit);
        for i in 0..3 {
            given[c][i] += counts[i];
        }
        let mut it = members.iter();
        for (which, n) in Split::ALL.iter().zip(counts) {
            for &i in it.by_ref().take(n) {
                split[i] = *which;
            }
        }
    }
    Ok(SplitAssignment {
        split,
        cluster: km.assignment,
        centroids: km.centroids,
    })
}

/// Confirms every sample's recorded cluster is the one its location falls
/// in, so no sample can sit in one cluster's region while being filed
/// under another.
pub fn leakage_audit(a: &SplitAssignment, locations: &[Location]) -> Result<()> {
    if a.cluster.len() != locations.len() || a.split.len() != locations.len() {
        return Err(Error::shape("assignment does not cover the sample set"));
    }
    for (i, (l, c)) in locations.iter().zip(&a.cluster).enumerate() {
        let home = nearest_centroid(&a.centroids, [l.lat, l.lon]);
        if home != *c {
            return Err(Error::invalid(format!(
                "sample {i} ({}) is recorded in cluster {c} but lies in cluster {home}",
                a.split[i].as_str()
            )));
        }
    }
    Ok(())
}

/// Keeps a seeded `keep_fraction` of the zero-label entries of `indices`
/// and every nonzero one, in the original order.
pub fn undersample_zeros(
    indices: &[usize],
    labels: &[f64],
    keep_fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::config(format!(
            "keep fraction {keep_fraction} outside [0, 1]"
        )));
    }
    let zeros: Vec<usize> = (0..indices.len())
        .filter(|&p| labels[indices[p]] == 0.0)
        .collect();
    let keep_n = (keep_fraction * zeros.len() as f64).round() as usize;
    let mut r = rng::stream(seed, rng::streams::UNDERSAMPLE);
    let mut keep = alloc::vec![true; indices.len()];
    for &p in &zeros {
        keep[p] = false;
    }
    for j in sample(&mut r, zeros.len(), keep_n) {
        keep[zeros[j]] = true;
    }
    Ok(indices
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(i, _)| *i)
        .collect())
}
