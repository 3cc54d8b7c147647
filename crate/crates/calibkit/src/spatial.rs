//! Spatial search primitives: k-d tree, axis-aligned boxes, voxel grids.
//!
//! Ties in distance are broken by ascending point index so that queries are
//! deterministic for a given input order.

use std::collections::HashMap;

use nalgebra::Vector3;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points(points: &[Vector3<f64>]) -> Option<Aabb> {
        let first = points.first()?;
        let mut min = *first;
        let mut max = *first;
        for p in &points[1..] {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Some(Aabb { min, max })
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let mut min = Vector3::zeros();
        let mut max = Vector3::zeros();
        for a in 0..3 {
            min[a] = self.min[a].max(other.min[a]);
            max[a] = self.max[a].min(other.max[a]);
            if min[a] > max[a] {
                return None;
            }
        }
        Some(Aabb { min, max })
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min.map(|v| v - margin),
            max: self.max.map(|v| v + margin),
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn diagonal(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        let d = self.diagonal();
        d.x.max(d.y).max(d.z)
    }
}

/// Static 3D k-d tree over a point slice.
///
/// Nodes are the median elements of an index permutation, so the tree lives
/// in one flat array. Coordinates must be finite.
pub struct KdTree {
    pts: Vec<Vector3<f64>>,
    order: Vec<u32>,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> KdTree {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build_range(points, &mut order, 0);
        KdTree {
            pts: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Index and squared distance of the nearest point; ties go to the
    /// lowest index. `None` on an empty tree.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.pts.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.nearest_in(&self.order, 0, query, &mut best);
        Some((best.1 as usize, best.0))
    }

    fn nearest_in(&self, slice: &[u32], axis: usize, q: &Vector3<f64>, best: &mut (f64, u32)) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let node = slice[mid];
        let p = &self.pts[node as usize];
        let d2 = (p - q).norm_squared();
        if d2 < best.0 || (d2 == best.0 && node < best.1) {
            *best = (d2, node);
        }
        let delta = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (near, far) = if delta < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.nearest_in(near, next, q, best);
        if delta * delta <= best.0 {
            self.nearest_in(far, next, q, best);
        }
    }

    /// The k nearest points, sorted by ascending (squared distance, index).
    /// Fewer than k results when the tree is smaller. An optional radius
    /// excludes points farther than `max_radius`.
    pub fn k_nearest(
        &self,
        query: &Vector3<f64>,
        k: usize,
        max_radius: Option<f64>,
    ) -> Vec<(usize, f64)> {
        if k == 0 || self.pts.is_empty() {
            return Vec::new();
        }
        let radius2 = max_radius.map(|r| r * r);
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.k_nearest_in(&self.order, 0, query, k, radius2, &mut found);
        found.into_iter().map(|(d2, i)| (i as usize, d2)).collect()
    }

    fn k_nearest_in(
        &self,
        slice: &[u32],
        axis: usize,
        q: &Vector3<f64>,
        k: usize,
        radius2: Option<f64>,
        found: &mut Vec<(f64, u32)>,
    ) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let node = slice[mid];
        let p = &self.pts[node as usize];
        let d2 = (p - q).norm_squared();
        let within_radius = radius2.is_none_or(|r2| d2 <= r2);
        if within_radius && (found.len() < k || (d2, node) < *found.last().unwrap()) {
            let pos = found.partition_point(|&e| e < (d2, node));
            found.insert(pos, (d2, node));
            if found.len() > k {
                found.pop();
            }
        }
        let delta = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (near, far) = if delta < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.k_nearest_in(near, next, q, k, radius2, found);
        let worst = if found.len() < k {
            f64::INFINITY
        } else {
            found.last().unwrap().0
        };
        let bound = radius2.map_or(worst, |r2| worst.min(r2));
        if delta * delta <= bound {
            self.k_nearest_in(far, next, q, k, radius2, found);
        }
    }
}

fn build_range(pts: &[Vector3<f64>], order: &mut [u32], axis: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        pts[a as usize][axis]
            .partial_cmp(&pts[b as usize][axis])
            .expect("point coordinates must be finite")
            .then(a.cmp(&b))
    });
    let next = (axis + 1) % 3;
    let (left, rest) = order.split_at_mut(mid);
    build_range(pts, left, next);
    build_range(pts, &mut rest[1..], next);
}

/// Integer cell of `p` on a grid anchored at `origin` with edge `size`.
pub fn voxel_key(p: &Vector3<f64>, origin: &Vector3<f64>, size: f64) -> (i64, i64, i64) {
    (
        ((p.x - origin.x) / size).floor() as i64,
        ((p.y - origin.y) / size).floor() as i64,
        ((p.z - origin.z) / size).floor() as i64,
    )
}

/// Number of occupied voxels among `candidates`.
pub fn count_occupied_voxels<I: IntoIterator<Item = usize>>(
    positions: &[Vector3<f64>],
    candidates: I,
    origin: &Vector3<f64>,
    size: f64,
) -> usize {
    let mut keys: Vec<(i64, i64, i64)> = candidates
        .into_iter()
        .map(|i| voxel_key(&positions[i], origin, size))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Keep one candidate per occupied voxel: the point nearest the centroid of
/// the voxel's members, ties broken by lower index. Survivors are returned
/// sorted by ascending index (input order).
pub fn voxel_thin<I: IntoIterator<Item = usize>>(
    positions: &[Vector3<f64>],
    candidates: I,
    origin: &Vector3<f64>,
    size: f64,
) -> Vec<usize> {
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for i in candidates {
        cells
            .entry(voxel_key(&positions[i], origin, size))
            .or_default()
            .push(i);
    }
    let mut survivors: Vec<usize> = cells
        .values()
        .map(|members| {
            let centroid: Vector3<f64> =
                members.iter().map(|&i| positions[i]).sum::<Vector3<f64>>() / members.len() as f64;
            let mut best = (f64::INFINITY, usize::MAX);
            for &i in members {
                let d2 = (positions[i] - centroid).norm_squared();
                if d2 < best.0 || (d2 == best.0 && i < best.1) {
                    best = (d2, i);
                }
            }
            best.1
        })
        .collect();
    survivors.sort_unstable();
    survivors
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect()
    }

    fn brute_nearest(pts: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in pts.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        (best.1, best.0)
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = random_points(500, 1);
        let queries = random_points(200, 2);
        let tree = KdTree::build(&pts);
        for q in &queries {
            let (bi, bd) = brute_nearest(&pts, q);
            let (ti, td) = tree.nearest(q).unwrap();
            assert_eq!(ti, bi);
            assert_eq!(td, bd);
        }
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let pts = random_points(300, 3);
        let queries = random_points(50, 4);
        let tree = KdTree::build(&pts);
        for q in &queries {
            let got = tree.k_nearest(q, 7, None);
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm_squared(), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (j, &(d2, i)) in all[..7].iter().enumerate() {
                assert_eq!(got[j], (i, d2));
            }
        }
    }

    #[test]
    fn coincident_points_tie_break_by_index() {
        let pts = vec![Vector3::zeros(); 5];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(&Vector3::zeros()).unwrap().0, 0);
        let knn = tree.k_nearest(&Vector3::zeros(), 3, None);
        assert_eq!(
            knn.iter().map(|&(i, _)| i).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn radius_limits_neighbors() {
        let pts = vec![
            Vector3::zeros(),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(10.0, 0.0, 0.0),
        ];
        let tree = KdTree::build(&pts);
        let knn = tree.k_nearest(&Vector3::zeros(), 3, Some(1.0));
        assert_eq!(knn.len(), 2);
    }

    #[test]
    fn voxel_thin_one_survivor_per_cell() {
        let pts = vec![Vector3::new(0.01, 0.01, 0.01); 1000];
        let survivors = voxel_thin(&pts, 0..1000, &Vector3::zeros(), 0.2);
        assert_eq!(survivors, vec![0]);
    }

    #[test]
    fn voxel_thin_keeps_point_nearest_centroid() {
        // centroid of members is (0.05, 0, 0); index 1 is nearest
        let pts = vec![
            Vector3::new(0.01, 0.0, 0.0),
            Vector3::new(0.05, 0.0, 0.0),
            Vector3::new(0.09, 0.0, 0.0),
        ];
        let survivors = voxel_thin(&pts, 0..3, &Vector3::zeros(), 1.0);
        assert_eq!(survivors, vec![1]);
    }

    #[test]
    fn aabb_intersection_disjoint_is_none() {
        let a = Aabb {
            min: Vector3::zeros(),
            max: Vector3::new(1.0, 1.0, 1.0),
        };
        let b = Aabb {
            min: Vector3::new(2.0, 0.0, 0.0),
            max: Vector3::new(3.0, 1.0, 1.0),
        };
        assert!(a.intersection(&b).is_none());
        assert!(a.intersection(&a).is_some());
    }
}
