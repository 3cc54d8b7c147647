//! Per-point normal vectors and planarity from local neighborhoods.
//!
//! For each point the covariance of its k nearest neighbors (the point
//! itself included) is eigen-decomposed. The normal is the eigenvector of
//! the smallest eigenvalue; with eigenvalues `l1 >= l2 >= l3 >= 0` the
//! planarity is `(l2 - l3) / l1`, clamped to [0, 1]. A value of 1
//! corresponds to a locally perfect plane.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::spatial::KdTree;
use crate::{CalibError, Result};

/// Neighborhood definition for feature estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodConfig {
    /// Number of nearest neighbors, the query point included. At least 3.
    pub k_neighbors: usize,
    /// Neighbors beyond this radius are excluded, meters.
    pub max_radius: Option<f64>,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            k_neighbors: 10,
            max_radius: None,
        }
    }
}

impl NeighborhoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors < 3 {
            return Err(CalibError::InvalidConfig(
                "k_neighbors must be at least 3 (a plane fit needs 3 points)".into(),
            ));
        }
        if let Some(r) = self.max_radius {
            if !(r > 0.0) {
                return Err(CalibError::InvalidConfig(
                    "max_radius must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Eigenvalues (descending) and the eigenvector of the smallest eigenvalue
/// of the covariance of `points`.
fn neighborhood_eigen(points: &[Vector3<f64>]) -> ([f64; 3], Vector3<f64>) {
    let n = points.len() as f64;
    let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = [
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    ];
    let smallest = eig.eigenvectors.column(idx[2]).into_owned();
    (values, smallest)
}

/// Estimate a unit normal and a planarity value for every point.
///
/// The normal sign is disambiguated toward the sensor origin of the cloud's
/// own frame (`dot(normal, -position) >= 0`). Points whose neighborhood is
/// rank-deficient (all neighbors coincident) get planarity 0 and the unit
/// z normal.
pub fn estimate_normals_planarity(
    cloud: &PointCloud,
    cfg: &NeighborhoodConfig,
) -> Result<PointCloud> {
    cfg.validate()?;
    if cloud.len() < cfg.k_neighbors {
        return Err(CalibError::InsufficientData {
            got: cloud.len(),
            needed: cfg.k_neighbors,
        });
    }
    let positions = cloud.positions();
    let tree = KdTree::build(positions);

    let per_point: Vec<(Vector3<f64>, f64)> = (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = tree.k_nearest(&positions[i], cfg.k_neighbors, cfg.max_radius);
            let pts: Vec<Vector3<f64>> = neighbors.iter().map(|&(j, _)| positions[j]).collect();
            let (values, mut normal) = neighborhood_eigen(&pts);
            if !(values[0] > 0.0) {
                return (Vector3::z(), 0.0);
            }
            let planarity = ((values[1] - values[2]) / values[0]).clamp(0.0, 1.0);
            normal.normalize_mut();
            if normal.dot(&positions[i]) > 0.0 {
                normal = -normal;
            }
            (normal, planarity)
        })
        .collect();

    let (normals, planarities) = per_point.into_iter().unzip();
    cloud.clone().with_normals_planarity(normals, planarities)
}
