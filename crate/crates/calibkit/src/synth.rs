//! Synthetic planar worlds with exact ground truth.
//!
//! Scenes are unions of uniformly sampled rectangles plus optional isotropic
//! clutter. Sensor views are rendered by expressing in-range world points in
//! the sensor frame and perturbing them with Gaussian noise. All sampling is
//! seeded and bit-reproducible.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{ExtrinsicParams, PointCloud};
use crate::spatial::Aabb;
use crate::{CalibError, Result};

/// One rectangular plane patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSpec {
    /// Rectangle center, meters.
    pub center: Vector3<f64>,
    /// Plane normal; normalized internally, need not be unit on input.
    pub normal: Vector3<f64>,
    /// Side lengths, meters.
    pub extent: [f64; 2],
    /// Sampling density, points per square meter.
    pub density: f64,
}

/// A synthetic world: plane patches plus isotropic clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub planes: Vec<PlaneSpec>,
    /// Fraction of the total point count emulating non-planar clutter
    /// (vegetation), in [0, 1).
    pub clutter_fraction: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.planes.is_empty() {
            return Err(CalibError::InvalidConfig(
                "a scene needs at least one plane".into(),
            ));
        }
        for p in &self.planes {
            if !(p.density > 0.0) {
                return Err(CalibError::InvalidConfig("plane density must be positive".into()));
            }
            if !(p.extent[0] > 0.0) || !(p.extent[1] > 0.0) {
                return Err(CalibError::InvalidConfig("plane extent must be positive".into()));
            }
            if p.normal.norm() == 0.0 {
                return Err(CalibError::InvalidConfig("plane normal must be non-zero".into()));
            }
        }
        if !(0.0..1.0).contains(&self.clutter_fraction) {
            return Err(CalibError::InvalidConfig(
                "clutter_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Two unit vectors spanning the plane orthogonal to `normal`.
fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Deterministic (seeded) sampling of each plane plus clutter. Points carry
/// no attributes; normals and planarity are estimated downstream.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    for plane in &spec.planes {
        let count = (plane.density * plane.extent[0] * plane.extent[1]).round() as usize;
        let (u, v) = plane_basis(&plane.normal);
        for _ in 0..count {
            let a = (rng.gen::<f64>() - 0.5) * plane.extent[0];
            let b = (rng.gen::<f64>() - 0.5) * plane.extent[1];
            points.push(plane.center + u * a + v * b);
        }
    }
    if spec.clutter_fraction > 0.0 {
        let n_plane = points.len() as f64;
        let n_clutter =
            (spec.clutter_fraction / (1.0 - spec.clutter_fraction) * n_plane).round() as usize;
        let bounds = Aabb::from_points(&points)
            .expect("plane sampling produced points")
            .expanded(0.1 * Aabb::from_points(&points).unwrap().max_extent().max(1.0));
        for _ in 0..n_clutter {
            points.push(Vector3::new(
                rng.gen_range(bounds.min.x..bounds.max.x),
                rng.gen_range(bounds.min.y..bounds.max.y),
                rng.gen_range(bounds.min.z..bounds.max.z),
            ));
        }
    }
    Ok(PointCloud::from_positions(points, "world"))
}

/// World points within `max_range` of the sensor, expressed in the sensor
/// frame (`sensor_pose` maps sensor frame to world frame), perturbed by
/// isotropic Gaussian noise.
pub fn render_view(
    world: &PointCloud,
    sensor_pose: &ExtrinsicParams,
    noise_sigma: f64,
    max_range: f64,
    seed: u64,
) -> Result<PointCloud> {
    if noise_sigma < 0.0 {
        return Err(CalibError::InvalidConfig("noise_sigma must be >= 0".into()));
    }
    let r = sensor_pose.rotation();
    let rt = r.transpose();
    let t = sensor_pose.translation();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma validated");
    let mut points = Vec::new();
    for p in world.positions() {
        if (p - t).norm() <= max_range {
            let mut q = rt * (p - t);
            if noise_sigma > 0.0 {
                q += Vector3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
            }
            points.push(q);
        }
    }
    Ok(PointCloud::from_positions(points, "view"))
}

/// Offset every angle by `uniform(-angle_mag, angle_mag)` and every
/// translation component by `uniform(-trans_mag, trans_mag)`, seeded.
pub fn perturb(
    params: &ExtrinsicParams,
    angle_mag: f64,
    trans_mag: f64,
    seed: u64,
) -> ExtrinsicParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |mag: f64| {
        if mag > 0.0 {
            rng.gen_range(-mag..mag)
        } else {
            0.0
        }
    };
    ExtrinsicParams::new(
        params.alpha_x + draw(angle_mag),
        params.alpha_y + draw(angle_mag),
        params.alpha_z + draw(angle_mag),
        params.t_x + draw(trans_mag),
        params.t_y + draw(trans_mag),
        params.t_z + draw(trans_mag),
    )
}

/// The documented "twelve_sites" scenario: 12 scenes of varying plane count
/// (1 to 4) emulating a drive past sites of mixed quality. Scene `k` is a
/// floor patch plus up to three walls, shifted a little from site to site,
/// with varying clutter.
pub fn twelve_sites() -> Vec<SceneSpec> {
    const PLANE_COUNTS: [usize; 12] = [3, 1, 2, 4, 3, 2, 1, 4, 3, 2, 4, 3];
    const CLUTTER: [f64; 12] = [
        0.0, 0.1, 0.05, 0.0, 0.1, 0.0, 0.15, 0.05, 0.0, 0.1, 0.0, 0.05,
    ];
    (0..12)
        .map(|k| {
            let dk = k as f64;
            let all_planes = vec![
                PlaneSpec {
                    center: Vector3::new(3.0 + 0.2 * dk, 0.5 * dk - 2.5, -1.2),
                    normal: Vector3::new(0.0, 0.0, 1.0),
                    extent: [7.0, 7.0],
                    density: 150.0,
                },
                PlaneSpec {
                    center: Vector3::new(6.5, 0.4 * dk - 2.0, 0.4),
                    normal: Vector3::new(1.0, 0.0, 0.0),
                    extent: [6.0, 3.0],
                    density: 180.0,
                },
                PlaneSpec {
                    center: Vector3::new(3.0, 4.0, 0.2),
                    normal: Vector3::new(0.0, 1.0, 0.0),
                    extent: [6.0, 3.0],
                    density: 180.0,
                },
                PlaneSpec {
                    center: Vector3::new(1.5, -3.5, 0.5),
                    normal: Vector3::new(1.0, 1.0, 0.5),
                    extent: [3.0, 2.0],
                    density: 180.0,
                },
            ];
            SceneSpec {
                planes: all_planes.into_iter().take(PLANE_COUNTS[k]).collect(),
                clutter_fraction: CLUTTER[k],
                seed: 1000 + k as u64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::transform::apply_transform;

    fn one_plane_spec() -> SceneSpec {
        SceneSpec {
            planes: vec![PlaneSpec {
                center: Vector3::new(0.0, 0.0, 2.0),
                normal: Vector3::new(0.0, 0.0, 1.0),
                extent: [1.0, 1.0],
                density: 100.0,
            }],
            clutter_fraction: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn plane_points_lie_on_the_plane() {
        let cloud = generate_scene(&one_plane_spec()).unwrap();
        assert_eq!(cloud.len(), 100);
        for p in cloud.positions() {
            assert!((p.z - 2.0).abs() < 1e-12);
            assert!(p.x.abs() <= 0.5 && p.y.abs() <= 0.5);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(&one_plane_spec()).unwrap();
        let b = generate_scene(&one_plane_spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clutter_fraction_of_total() {
        let spec = SceneSpec {
            planes: vec![PlaneSpec {
                center: Vector3::zeros(),
                normal: Vector3::z(),
                extent: [10.0, 10.0],
                density: 100.0,
            }],
            clutter_fraction: 0.2,
            seed: 6,
        };
        let cloud = generate_scene(&spec).unwrap();
        let total = cloud.len() as f64;
        let clutter = total - 10_000.0;
        assert!(
            (clutter / total - 0.2).abs() < 0.01 * 0.2 + 1e-4,
            "clutter share {}",
            clutter / total
        );
    }

    #[test]
    fn render_identity_no_noise_is_lossless() {
        let world = generate_scene(&one_plane_spec()).unwrap();
        let view = render_view(&world, &ExtrinsicParams::identity(), 0.0, f64::INFINITY, 1)
            .unwrap();
        assert_eq!(view.positions(), world.positions());
    }

    #[test]
    fn render_pose_round_trip() {
        let world = generate_scene(&one_plane_spec()).unwrap();
        let pose = ExtrinsicParams::new(0.2, -0.1, 0.4, 0.5, -0.2, 0.3);
        let view = render_view(&world, &pose, 0.0, f64::INFINITY, 1).unwrap();
        let back = apply_transform(&view, &pose).unwrap();
        for (a, b) in back.positions().iter().zip(world.positions()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn render_respects_max_range() {
        let world = PointCloud::from_positions(
            vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(50.0, 0.0, 0.0)],
            "world",
        );
        let view =
            render_view(&world, &ExtrinsicParams::identity(), 0.0, 10.0, 1).unwrap();
        assert_eq!(view.len(), 1);
    }

    #[test]
    fn render_noise_statistics() {
        let world =
            PointCloud::from_positions(vec![Vector3::new(1.0, 2.0, 3.0); 100_000], "world");
        let view = render_view(&world, &ExtrinsicParams::identity(), 0.01, f64::INFINITY, 3)
            .unwrap();
        for axis in 0..3 {
            let vals: Vec<f64> = view.positions().iter().map(|p| p[axis]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64)
                .sqrt();
            assert!((std - 0.01).abs() < 0.0005, "axis {axis} std {std}");
        }
    }

    #[test]
    fn perturb_zero_magnitude_is_identity() {
        let params = ExtrinsicParams::new(0.1, 0.2, 0.3, 1.0, 2.0, 3.0);
        assert_eq!(perturb(&params, 0.0, 0.0, 9), params);
    }

    #[test]
    fn perturb_bounds_and_determinism() {
        let params = ExtrinsicParams::identity();
        for seed in 0..1000 {
            let p = perturb(&params, 0.05, 0.02, seed);
            for (i, v) in p.to_array().iter().enumerate() {
                let mag = if i < 3 { 0.05 } else { 0.02 };
                assert!(v.abs() <= mag, "component {i} = {v}");
            }
        }
        assert_eq!(perturb(&params, 0.05, 0.02, 4), perturb(&params, 0.05, 0.02, 4));
    }

    #[test]
    fn twelve_sites_counts() {
        let sites = twelve_sites();
        assert_eq!(sites.len(), 12);
        let counts: Vec<usize> = sites.iter().map(|s| s.planes.len()).collect();
        assert_eq!(counts, vec![3, 1, 2, 4, 3, 2, 1, 4, 3, 2, 4, 3]);
        for s in &sites {
            s.validate().unwrap();
        }
    }
}
