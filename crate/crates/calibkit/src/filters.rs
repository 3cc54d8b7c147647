//! Pre-matching point cloud filtering.
//!
//! The stack runs named stages in a fixed order: range -> intensity ->
//! planarity -> voxel thin-out. Additional sensor-specific stages can be
//! pushed onto a [`FilterStack`] without touching this module. Every stage
//! returns a subset of its input, in input order; the voxel stage keeps the
//! real point nearest each occupied voxel's centroid rather than replacing
//! points by centroids, so attributes stay valid.

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::spatial::voxel_thin;
use crate::{CalibError, Result};

/// Thresholds of the built-in filter stages.
///
/// `min_intensity = None` or `min_planarity = None` deactivates the
/// respective stage. Range is measured from the cloud's own frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub min_range: f64,
    pub max_range: f64,
    pub min_intensity: Option<f64>,
    pub voxel_size: f64,
    pub min_planarity: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_range: 0.5,
            max_range: 60.0,
            min_intensity: None,
            voxel_size: 0.2,
            min_planarity: Some(0.3),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_range < self.max_range) {
            return Err(CalibError::InvalidConfig(
                "min_range must be smaller than max_range".into(),
            ));
        }
        if !(self.voxel_size > 0.0) {
            return Err(CalibError::InvalidConfig("voxel_size must be positive".into()));
        }
        if let Some(p) = self.min_planarity {
            if !(0.0..=1.0).contains(&p) {
                return Err(CalibError::InvalidConfig(
                    "min_planarity must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One named stage of the filter pipeline.
pub trait FilterStage: Send + Sync {
    fn name(&self) -> &str;
    /// Indices of surviving points, ascending.
    fn retain(&self, cloud: &PointCloud) -> Result<Vec<usize>>;
}

struct RangeFilter {
    min_range: f64,
    max_range: f64,
}

impl FilterStage for RangeFilter {
    fn name(&self) -> &str {
        "range"
    }

    fn retain(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        Ok(cloud
            .positions()
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let r = p.norm();
                r >= self.min_range && r <= self.max_range
            })
            .map(|(i, _)| i)
            .collect())
    }
}

struct IntensityFilter {
    min_intensity: f64,
}

impl FilterStage for IntensityFilter {
    fn name(&self) -> &str {
        "intensity"
    }

    fn retain(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        let intensities = cloud.intensities().ok_or_else(|| CalibError::MissingAttribute {
            stage: self.name().into(),
            attribute: "intensity".into(),
        })?;
        Ok((0..cloud.len())
            .filter(|&i| intensities[i] >= self.min_intensity)
            .collect())
    }
}

struct PlanarityFilter {
    min_planarity: f64,
}

impl FilterStage for PlanarityFilter {
    fn name(&self) -> &str {
        "planarity"
    }

    fn retain(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        let planarities = cloud.planarities().ok_or_else(|| CalibError::MissingAttribute {
            stage: self.name().into(),
            attribute: "planarity".into(),
        })?;
        Ok((0..cloud.len())
            .filter(|&i| planarities[i] >= self.min_planarity)
            .collect())
    }
}

struct VoxelThinOut {
    voxel_size: f64,
}

impl FilterStage for VoxelThinOut {
    fn name(&self) -> &str {
        "voxel"
    }

    fn retain(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        // grid anchored at the frame origin so re-filtering is a no-op
        Ok(voxel_thin(
            cloud.positions(),
            0..cloud.len(),
            &Vector3::zeros(),
            self.voxel_size,
        ))
    }
}

/// Ordered list of filter stages.
pub struct FilterStack {
    stages: Vec<Box<dyn FilterStage>>,
}

impl FilterStack {
    pub fn from_config(cfg: &FilterConfig) -> Result<FilterStack> {
        cfg.validate()?;
        let mut stages: Vec<Box<dyn FilterStage>> = vec![Box::new(RangeFilter {
            min_range: cfg.min_range,
            max_range: cfg.max_range,
        })];
        if let Some(min_intensity) = cfg.min_intensity {
            stages.push(Box::new(IntensityFilter { min_intensity }));
        }
        if let Some(min_planarity) = cfg.min_planarity {
            stages.push(Box::new(PlanarityFilter { min_planarity }));
        }
        stages.push(Box::new(VoxelThinOut {
            voxel_size: cfg.voxel_size,
        }));
        Ok(FilterStack { stages })
    }

    /// Register a sensor-specific stage at the end of the stack.
    pub fn push(&mut self, stage: Box<dyn FilterStage>) {
        self.stages.push(stage);
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let mut current = cloud.clone();
        for stage in &self.stages {
            let kept = stage.retain(&current)?;
            if kept.is_empty() {
                return Err(CalibError::EmptyFilterResult {
                    stage: stage.name().into(),
                });
            }
            if kept.len() < current.len() {
                current = current.select(&kept);
            }
        }
        Ok(current)
    }
}

/// Run the built-in stack defined by `cfg` over `cloud`.
pub fn apply_filters(cloud: &PointCloud, cfg: &FilterConfig) -> Result<PointCloud> {
    FilterStack::from_config(cfg)?.apply(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use crate::features::{estimate_normals_planarity, NeighborhoodConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn no_planarity(cfg: FilterConfig) -> FilterConfig {
        FilterConfig {
            min_planarity: None,
            ..cfg
        }
    }

    #[test]
    fn range_cut() {
        let cloud = PointCloud::from_positions(
            vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(100.0, 0.0, 0.0)],
            "s",
        );
        let cfg = no_planarity(FilterConfig::default());
        let out = apply_filters(&cloud, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.positions()[0], Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn coincident_voxel_single_survivor() {
        let cloud =
            PointCloud::from_positions(vec![Vector3::new(1.0, 1.0, 1.0); 1000], "s");
        let cfg = no_planarity(FilterConfig::default());
        let out = apply_filters(&cloud, &cfg).unwrap();
        assert_eq!(out.len(), 1);
    }

    /// Plane of 6-fold-symmetric hexagon clusters (planarity exactly 1) plus
    /// octahedron clusters (isotropic, planarity exactly 0): with the
    /// planarity gate at 0.3 only the plane points survive.
    #[test]
    fn planarity_gate_keeps_plane_points() {
        let rho = 0.05;
        let mut pts = Vec::new();
        for cx in 0..4 {
            for cy in 0..4 {
                let (cx, cy) = (0.7 + 0.5 * cx as f64, 0.7 + 0.5 * cy as f64);
                for k in 0..6 {
                    let ang = TAU * k as f64 / 6.0;
                    pts.push(Vector3::new(cx + rho * ang.cos(), cy + rho * ang.sin(), 1.0));
                }
            }
        }
        let n_plane = pts.len();
        let octa = [
            Vector3::new(rho, 0.0, 0.0),
            Vector3::new(-rho, 0.0, 0.0),
            Vector3::new(0.0, rho, 0.0),
            Vector3::new(0.0, -rho, 0.0),
            Vector3::new(0.0, 0.0, rho),
            Vector3::new(0.0, 0.0, -rho),
        ];
        for c in 0..8 {
            let center = Vector3::new(2.5 + 0.4 * c as f64, -1.0, 0.5);
            for v in &octa {
                pts.push(center + v);
            }
        }
        let cloud = PointCloud::from_positions(pts, "s");
        let featured = estimate_normals_planarity(
            &cloud,
            &NeighborhoodConfig {
                k_neighbors: 6,
                max_radius: None,
            },
        )
        .unwrap();
        let cfg = FilterConfig {
            voxel_size: 0.001,
            ..FilterConfig::default()
        };
        let out = apply_filters(&featured, &cfg).unwrap();
        assert_eq!(out.len(), n_plane);
        for p in out.positions() {
            assert_eq!(p.z, 1.0);
        }
    }

    fn random_attributed_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Point> = (0..n)
            .map(|_| Point {
                position: Vector3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                ),
                intensity: Some(rng.gen_range(0.0..100.0)),
                normal: Some(Vector3::z()),
                planarity: Some(rng.gen_range(0.0..1.0)),
            })
            .collect();
        PointCloud::from_points(points, "s").unwrap()
    }

    #[test]
    fn idempotent_and_subset() {
        let cloud = random_attributed_cloud(2000, 9);
        let cfg = FilterConfig {
            min_intensity: Some(20.0),
            ..FilterConfig::default()
        };
        let once = apply_filters(&cloud, &cfg).unwrap();
        let twice = apply_filters(&once, &cfg).unwrap();
        assert_eq!(once, twice);

        // every output point is an input point, in input order
        let mut cursor = 0;
        for p in once.positions() {
            while cursor < cloud.len() && cloud.positions()[cursor] != *p {
                cursor += 1;
            }
            assert!(cursor < cloud.len(), "output point not found in input order");
            cursor += 1;
        }
    }

    #[test]
    fn at_most_one_point_per_voxel() {
        let cloud = random_attributed_cloud(3000, 10);
        let cfg = FilterConfig::default();
        let out = apply_filters(&cloud, &cfg).unwrap();
        let mut keys: Vec<_> = out
            .positions()
            .iter()
            .map(|p| crate::spatial::voxel_key(p, &Vector3::zeros(), cfg.voxel_size))
            .collect();
        let total = keys.len();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), total);
    }

    #[test]
    fn missing_attribute_is_named() {
        let cloud = PointCloud::from_positions(vec![Vector3::new(1.0, 0.0, 0.0)], "s");
        let cfg = FilterConfig {
            min_intensity: Some(1.0),
            min_planarity: None,
            ..FilterConfig::default()
        };
        match apply_filters(&cloud, &cfg) {
            Err(CalibError::MissingAttribute { attribute, .. }) => {
                assert_eq!(attribute, "intensity")
            }
            other => panic!("expected MissingAttribute, got {other:?}"),
        }
    }

    #[test]
    fn empty_result_is_an_error() {
        let cloud = PointCloud::from_positions(vec![Vector3::new(100.0, 0.0, 0.0); 3], "s");
        let cfg = no_planarity(FilterConfig::default());
        match apply_filters(&cloud, &cfg) {
            Err(CalibError::EmptyFilterResult { stage }) => assert_eq!(stage, "range"),
            other => panic!("expected EmptyFilterResult, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = FilterConfig {
            min_range: 10.0,
            max_range: 1.0,
            ..FilterConfig::default()
        };
        assert!(apply_filters(
            &PointCloud::from_positions(vec![Vector3::x()], "s"),
            &cfg
        )
        .is_err());
    }
}
