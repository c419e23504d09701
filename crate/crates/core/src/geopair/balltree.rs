use alloc::vec::Vec;

use super::point::{haversine, GeoPoint};
use crate::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
struct Node {
    center: GeoPoint,
    radius: f64,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Metric ball tree over the haversine distance.
///
/// Splits at the median along the unit-sphere axis of largest spread, so
/// the height is `ceil(log2(n / LEAF_SIZE))` at most.
#[derive(Clone, Debug)]
pub struct BallTree {
    points: Vec<GeoPoint>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl BallTree {
    pub fn build(points: &[GeoPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot index an empty point set"));
        }
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        let vectors: Vec<[f64; 3]> = points.iter().map(|p| p.to_unit_vector()).collect();
        tree.build_node(&vectors, 0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, vectors: &[[f64; 3]], start: usize, end: usize) -> usize {
        let idx = &self.order[start..end];
        let mut mean = [0.0; 3];
        for &i in idx {
            for d in 0..3 {
                mean[d] += vectors[i][d];
            }
        }
        let center = GeoPoint::from_vector(mean).unwrap_or(self.points[idx[0]]);
        let radius = idx
            .iter()
            .map(|&i| haversine(center, self.points[i]))
            .fold(0.0, f64::max);
        let id = self.nodes.len();
        self.nodes.push(Node {
            center,
            radius,
            start,
            end,
            children: None,
        });
        if end - start > LEAF_SIZE {
            let mut axis = 0;
            let mut best = f64::NEG_INFINITY;
            for d in 0..3 {
                let (lo, hi) = idx
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        (lo.min(vectors[i][d]), hi.max(vectors[i][d]))
                    });
                if hi - lo > best {
                    best = hi - lo;
                    axis = d;
                }
            }
            let mid = start + (end - start) / 2;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                vectors[a][axis]
                    .total_cmp(&vectors[b][axis])
                    .then(a.cmp(&b))
            });
            let left = self.build_node(vectors, start, mid);
            let right = self.build_node(vectors, mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id].children {
                None => 0,
                Some((l, r)) => 1 + walk(nodes, l).max(walk(nodes, r)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Exact nearest neighbor as `(index, central angle)`. Equidistant
    /// candidates resolve to the lowest index.
    pub fn nearest(&self, q: GeoPoint) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, id: usize, q: GeoPoint, best: &mut (usize, f64)) {
        let node = &self.nodes[id];
        let bound = (haversine(q, node.center) - node.radius).max(0.0);
        // the bound carries round-off; keep a small margin so exact ties survive
        if bound > best.1 + 1e-12 {
            return;
        }
        match node.children {
            None => {
                for &i in &self.order[node.start..node.end] {
                    let d = haversine(q, self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Some((l, r)) => {
                let dl = haversine(q, self.nodes[l].center);
                let dr = haversine(q, self.nodes[r].center);
                let (a, b) = if dl <= dr { (l, r) } else { (r, l) };
                self.search(a, q, best);
                self.search(b, q, best);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(
        rng: &mut ChaCha8Rng,
        n: usize,
        lat: (f64, f64),
        lon: (f64, f64),
    ) -> Vec<GeoPoint> {
        (0..n)
            .map(|_| {
                GeoPoint::from_degrees(
                    rng.random_range(lat.0..lat.1),
                    rng.random_range(lon.0..lon.1),
                )
                .unwrap()
            })
            .collect()
    }

    fn brute(points: &[GeoPoint], q: GeoPoint) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = haversine(q, *p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn single_point() {
        let p = GeoPoint::from_degrees(10.0, 20.0).unwrap();
        let t = BallTree::build(&[p]).unwrap();
        assert_eq!(
            t.nearest(GeoPoint::from_degrees(-50.0, 170.0).unwrap()).0,
            0
        );
        assert!(BallTree::build(&[]).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (lat, lon) in [
            ((-90.0, 90.0), (-180.0, 180.0)),
            ((35.0, 36.0), (-120.0, -119.0)),
        ] {
            let pts = random_points(&mut rng, 1000, lat, lon);
            let tree = BallTree::build(&pts).unwrap();
            for q in random_points(&mut rng, 1000, lat, lon) {
                assert_eq!(tree.nearest(q), brute(&pts, q));
            }
            for (i, p) in pts.iter().enumerate() {
                assert_eq!(tree.nearest(*p), (i, 0.0));
            }
        }
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let p = GeoPoint::from_degrees(1.0, 1.0).unwrap();
        let mut pts = alloc::vec![GeoPoint::from_degrees(5.0, 5.0).unwrap(); 30];
        pts.extend(core::iter::repeat_n(p, 20));
        let t = BallTree::build(&pts).unwrap();
        assert_eq!(t.nearest(p), (30, 0.0));
    }

    #[test]
    fn height_is_logarithmic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 9, 100, 1000, 4097] {
            let pts = random_points(&mut rng, n, (-60.0, 60.0), (-180.0, 180.0));
            let t = BallTree::build(&pts).unwrap();
            let bound = (n as f64).log2().ceil() as usize;
            assert!(t.height() <= bound + 1, "n={n} height={}", t.height());
        }
    }
}
