//! The correspondence engine: point selection, nearest-neighbor matching,
//! outlier rejection, and the ICP outer loop.
//!
//! One calibration runs selection once, then iterates matching ->
//! rejection -> adjustment -> transformation until the parameter updates
//! fall below the convergence thresholds. The reference cloud stays fixed;
//! the movable cloud is re-indexed each iteration under the current
//! parameters.

use nalgebra::{Matrix3, Vector3};

use crate::adjust::{
    median, robust_sigma, solve_gauss_markov_with, AdjustmentResult, ResidualBundle, SolveConfig,
};
use crate::cloud::{ExtrinsicParams, ParamPrior, PointCloud};
use crate::spatial::{count_occupied_voxels, voxel_thin, Aabb, KdTree};
use crate::transform::param_delta;
use crate::{CalibError, Result};

/// One reference-to-movable point pairing.
///
/// `p` is the movable point in its original sensor frame; `signed_distance`
/// is the point-to-plane distance `((R p + t) - q)^T n` under the parameters
/// the correspondence was computed with.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub ref_index: usize,
    pub mov_index: usize,
    /// Reference point, meters.
    pub q: Vector3<f64>,
    /// Reference point unit normal.
    pub n: Vector3<f64>,
    /// Movable point, meters.
    pub p: Vector3<f64>,
    pub signed_distance: f64,
}

/// Thresholds of the correspondence engine and the ICP loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Target number of selected reference points.
    pub num_selected: usize,
    /// Distance gate in multiples of the robust scale of the distances.
    pub max_distance_factor: f64,
    /// Gate on the angle between corresponding normals, radians.
    pub max_normal_angle: f64,
    pub max_iterations: usize,
    /// ICP convergence threshold on angle updates, radians.
    pub convergence_delta_angle: f64,
    /// ICP convergence threshold on translation updates, meters.
    pub convergence_delta_translation: f64,
    /// Minimum surviving correspondences before the scene counts as unsuitable.
    pub min_correspondences: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            num_selected: 2000,
            max_distance_factor: 3.0,
            max_normal_angle: 30.0_f64.to_radians(),
            max_iterations: 50,
            convergence_delta_angle: 1e-5,
            convergence_delta_translation: 1e-4,
            min_correspondences: 100,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_selected == 0
            || self.max_iterations == 0
            || self.min_correspondences == 0
            || !(self.max_distance_factor > 0.0)
            || !(self.max_normal_angle > 0.0)
            || !(self.convergence_delta_angle > 0.0)
            || !(self.convergence_delta_translation > 0.0)
        {
            return Err(CalibError::InvalidConfig(
                "all matching thresholds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform-sampling selection: reference points inside the overlap of the
/// two clouds, thinned on a voxel grid whose resolution is tuned so that
/// roughly `num_selected` voxels are occupied (one survivor each).
///
/// The overlap region is the intersection of the reference bounding box
/// with `mov_cloud_bounds`, expanded by one voxel of the chosen resolution.
pub fn select_uniform(
    ref_cloud: &PointCloud,
    mov_cloud_bounds: &Aabb,
    cfg: &MatchConfig,
) -> Result<Vec<usize>> {
    if ref_cloud.is_empty() {
        return Err(CalibError::EmptyCloud);
    }
    let positions = ref_cloud.positions();
    let ref_bounds = Aabb::from_points(positions).expect("non-empty cloud");
    let overlap = ref_bounds
        .intersection(mov_cloud_bounds)
        .ok_or(CalibError::NoOverlap)?;
    let target = cfg.num_selected;

    let candidates_at = |v: f64| -> Vec<usize> {
        let region = overlap.expanded(v);
        (0..positions.len())
            .filter(|&i| region.contains(&positions[i]))
            .collect()
    };
    let occupied_at = |v: f64, cands: &[usize]| -> usize {
        let origin = overlap.min - Vector3::repeat(v);
        count_occupied_voxels(positions, cands.iter().copied(), &origin, v)
    };

    let extent = overlap.max_extent();
    let lo0 = (extent * 1e-6).max(1e-12);
    // nominal voxel edge if the overlap were split into ~target cells; also
    // the expansion margin, so boundary planes shifted by the initial-guess
    // error stay inside the region
    let nominal = (extent / (target as f64).cbrt()).max(lo0);
    let candidates_nominal = candidates_at(nominal);
    if candidates_nominal.is_empty() {
        return Err(CalibError::NoOverlap);
    }
    if candidates_nominal.len() <= target {
        return Ok(candidates_nominal);
    }

    // geometric bisection on the voxel edge; occupancy decreases with v
    let mut lo = lo0;
    let mut hi = extent.max(lo * 4.0);
    let mut best = (f64::INFINITY, lo);
    for _ in 0..40 {
        let v = (lo * hi).sqrt();
        let cands = candidates_at(v);
        let occ = occupied_at(v, &cands);
        let score = (occ as f64 - target as f64).abs();
        if score < best.0 {
            best = (score, v);
        }
        if occ > target {
            lo = v;
        } else {
            hi = v;
        }
        if occ == target {
            break;
        }
    }
    let v = best.1;
    let cands = candidates_at(v);
    let origin = overlap.min - Vector3::repeat(v);
    let survivors = voxel_thin(positions, cands, &origin, v);
    if survivors.is_empty() {
        return Err(CalibError::NoOverlap);
    }
    Ok(survivors)
}

/// For each selected reference point, the movable point nearest to it under
/// `current_params`, with the signed point-to-plane distance filled in.
pub fn match_nn(
    selected: &[usize],
    ref_cloud: &PointCloud,
    mov_cloud: &PointCloud,
    current_params: &ExtrinsicParams,
) -> Result<Vec<Correspondence>> {
    if mov_cloud.is_empty() {
        return Err(CalibError::EmptyCloud);
    }
    let ref_normals = ref_cloud.normals().ok_or_else(|| CalibError::MissingAttribute {
        stage: "matching".into(),
        attribute: "normals".into(),
    })?;
    let r = current_params.rotation();
    let t = current_params.translation();
    let transformed: Vec<Vector3<f64>> =
        mov_cloud.positions().iter().map(|p| r * p + t).collect();
    let tree = KdTree::build(&transformed);
    Ok(selected
        .iter()
        .map(|&i| {
            let q = ref_cloud.positions()[i];
            let n = ref_normals[i];
            let (j, _) = tree.nearest(&q).expect("movable cloud is non-empty");
            Correspondence {
                ref_index: i,
                mov_index: j,
                q,
                n,
                p: mov_cloud.positions()[j],
                signed_distance: (transformed[j] - q).dot(&n),
            }
        })
        .collect())
}

/// Drop correspondences whose distance sits more than
/// `max_distance_factor * sigma_d` from the median distance, or whose
/// normals (movable normal mapped through `rotation`) disagree by more than
/// `max_normal_angle`.
pub fn reject(
    correspondences: Vec<Correspondence>,
    mov_normals: &[Vector3<f64>],
    rotation: &Matrix3<f64>,
    cfg: &MatchConfig,
) -> Result<Vec<Correspondence>> {
    let distances: Vec<f64> = correspondences.iter().map(|c| c.signed_distance).collect();
    let sigma = robust_sigma(&distances)?;
    let center = median(&distances);
    let cos_gate = cfg.max_normal_angle.cos();
    let retained: Vec<Correspondence> = correspondences
        .into_iter()
        .filter(|c| {
            (c.signed_distance - center).abs() <= cfg.max_distance_factor * sigma
                && c.n.dot(&(rotation * mov_normals[c.mov_index])) >= cos_gate
        })
        .collect();
    if retained.len() < cfg.min_correspondences {
        return Err(CalibError::SceneUnsuitable {
            survivors: retained.len(),
            needed: cfg.min_correspondences,
        });
    }
    Ok(retained)
}

/// Full single-calibration ICP: selection once, then matching -> rejection
/// -> adjustment -> transformation until convergence or `max_iterations`.
///
/// Both clouds must be filtered and carry normals; `initial` must lie in the
/// convergence basin (angles within a few degrees, translations within a few
/// centimeters). Returns the total transform from the movable sensor frame
/// to the reference sensor frame, its covariance, and the residual
/// statistics of the final iteration. Non-convergence is reported through
/// `converged = false`, not as an error.
pub fn run_icp(
    ref_cloud: &PointCloud,
    mov_cloud: &PointCloud,
    initial: &ExtrinsicParams,
    prior: &ParamPrior,
    match_cfg: &MatchConfig,
) -> Result<AdjustmentResult> {
    match_cfg.validate()?;
    if ref_cloud.is_empty() || mov_cloud.is_empty() {
        return Err(CalibError::EmptyCloud);
    }
    let mov_normals = mov_cloud.normals().ok_or_else(|| CalibError::MissingAttribute {
        stage: "matching".into(),
        attribute: "normals".into(),
    })?;

    // fixed parameters take their prior values from the start
    let mut start = initial.to_array();
    let prior_vals = prior.values.to_array();
    for (i, v) in start.iter_mut().enumerate() {
        if !prior.estimate_mask[i] {
            *v = prior_vals[i];
        }
    }
    let mut params = ExtrinsicParams::from_array(start);

    let r0 = params.rotation();
    let t0 = params.translation();
    let mov_bounds = Aabb::from_points(
        &mov_cloud
            .positions()
            .iter()
            .map(|p| r0 * p + t0)
            .collect::<Vec<_>>(),
    )
    .expect("non-empty cloud");
    let selected = select_uniform(ref_cloud, &mov_bounds, match_cfg)?;

    let solve_cfg = SolveConfig {
        tol_angle: match_cfg.convergence_delta_angle,
        tol_translation: match_cfg.convergence_delta_translation,
        ..SolveConfig::default()
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<AdjustmentResult> = None;
    while iterations < match_cfg.max_iterations {
        iterations += 1;
        let correspondences = match_nn(&selected, ref_cloud, mov_cloud, &params)?;
        let retained = reject(correspondences, mov_normals, &params.rotation(), match_cfg)?;
        let sigma_d = robust_sigma(
            &retained
                .iter()
                .map(|c| c.signed_distance)
                .collect::<Vec<_>>(),
        )?;
        let bundle = ResidualBundle::new(retained, *prior, sigma_d)?;
        let result = solve_gauss_markov_with(&bundle, &params, &solve_cfg)?;
        let delta = param_delta(&result.params, &params);
        params = result.params;
        log::trace!(
            "icp iteration {iterations}: {} correspondences, residual std {:.6}",
            result.num_correspondences,
            result.residual_std
        );
        last = Some(result);
        let small = delta[..3]
            .iter()
            .all(|d| d.abs() < match_cfg.convergence_delta_angle)
            && delta[3..]
                .iter()
                .all(|d| d.abs() < match_cfg.convergence_delta_translation);
        if small {
            converged = true;
            break;
        }
    }

    let mut result = last.expect("at least one iteration ran");
    result.num_iterations = iterations;
    result.converged = converged;
    Ok(result)
}
