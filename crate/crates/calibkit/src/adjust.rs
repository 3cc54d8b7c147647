//! Non-linear weighted least-squares adjustment of the six parameters
//! (Gauss-Markov model).
//!
//! Two residual types are minimized together: signed point-to-plane
//! distances between corresponding points, weighted `1/sigma_d^2` with
//! `sigma_d` the robust (MAD-based) scale of the distances, and differences
//! between the parameters and their observed initial values, weighted by the
//! observation variances. Parameters can be masked out of the estimation and
//! are then held fixed at their prior values.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::cloud::{wrap_angle, ExtrinsicParams, ParamPrior, PARAM_NAMES};
use crate::matching::Correspondence;
use crate::{CalibError, Result};

/// Floor for the robust scale when all distances coincide, meters.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Scale factor turning the MAD into a consistent estimator of a normal
/// standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// Inner-loop settings of the Gauss-Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub max_iterations: usize,
    /// Convergence threshold on angle updates, radians.
    pub tol_angle: f64,
    /// Convergence threshold on translation updates, meters.
    pub tol_translation: f64,
    /// Condition-number limit of the weighted normal matrix.
    pub condition_threshold: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iterations: 20,
            tol_angle: 1e-5,
            tol_translation: 1e-4,
            condition_threshold: 1e10,
        }
    }
}

/// Everything one adjustment consumes.
#[derive(Debug, Clone)]
pub struct ResidualBundle {
    pub correspondences: Vec<Correspondence>,
    pub prior: ParamPrior,
    /// Robust scale of the a priori point-to-plane distances, meters.
    pub sigma_d: f64,
}

impl ResidualBundle {
    pub fn new(
        correspondences: Vec<Correspondence>,
        prior: ParamPrior,
        sigma_d: f64,
    ) -> Result<Self> {
        if !(sigma_d > 0.0) {
            return Err(CalibError::InvalidConfig("sigma_d must be positive".into()));
        }
        Ok(ResidualBundle {
            correspondences,
            prior,
            sigma_d,
        })
    }
}

/// Outcome of one adjustment (or one full ICP run).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentResult {
    pub params: ExtrinsicParams,
    /// 6x6 a posteriori covariance, rows/cols ordered
    /// `alpha_x, alpha_y, alpha_z, t_x, t_y, t_z`; fixed parameters carry
    /// zero rows and columns.
    pub covariance: Matrix6<f64>,
    /// Mean of the point-to-plane residuals at the solution, meters.
    pub residual_mean: f64,
    /// Standard deviation of the point-to-plane residuals, meters.
    pub residual_std: f64,
    pub num_correspondences: usize,
    pub num_iterations: usize,
    pub converged: bool,
}

impl AdjustmentResult {
    /// Per-parameter standard deviations, `sqrt(diag(C))`.
    pub fn sigmas(&self) -> [f64; 6] {
        let mut s = [0.0; 6];
        for (i, v) in s.iter_mut().enumerate() {
            *v = self.covariance[(i, i)].max(0.0).sqrt();
        }
        s
    }
}

/// Signed point-to-plane distance `((R p + t) - q)^T n`.
pub fn point_to_plane_residual(
    params: &ExtrinsicParams,
    p: &Vector3<f64>,
    q: &Vector3<f64>,
    n: &Vector3<f64>,
) -> f64 {
    ((params.rotation() * p + params.translation()) - q).dot(n)
}

/// Robust standard deviation `1.4826 * mad` of the distances, where `mad`
/// is the median of absolute differences w.r.t. the median. Returns the
/// floor of 1e-6 m when all values coincide, keeping weights finite.
pub fn robust_sigma(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(CalibError::EmptyInput("point-to-plane distances".into()));
    }
    let med = median(distances);
    let devs: Vec<f64> = distances.iter().map(|d| (d - med).abs()).collect();
    let sigma = MAD_SCALE * median(&devs);
    Ok(if sigma == 0.0 { SIGMA_FLOOR } else { sigma })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("distances must be finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Rotation and its three analytic angle derivatives at one linearization
/// point, shared across all residual rows.
pub(crate) struct Linearization {
    r: Matrix3<f64>,
    dr: [Matrix3<f64>; 3],
    t: Vector3<f64>,
}

impl Linearization {
    pub(crate) fn new(params: &ExtrinsicParams) -> Self {
        let (sa, ca) = params.alpha_x.sin_cos();
        let (sb, cb) = params.alpha_y.sin_cos();
        let (sc, cc) = params.alpha_z.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
        let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
        let rz = Matrix3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
        let dx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sa, -ca, 0.0, ca, -sa);
        let dy = Matrix3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
        let dz = Matrix3::new(-sc, -cc, 0.0, cc, -sc, 0.0, 0.0, 0.0, 0.0);
        Linearization {
            r: rz * ry * rx,
            dr: [rz * ry * dx, rz * dy * rx, dz * ry * rx],
            t: params.translation(),
        }
    }

    pub(crate) fn residual(&self, p: &Vector3<f64>, q: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
        ((self.r * p + self.t) - q).dot(n)
    }

    fn jacobian(&self, p: &Vector3<f64>, n: &Vector3<f64>) -> Vector6<f64> {
        Vector6::new(
            (self.dr[0] * p).dot(n),
            (self.dr[1] * p).dot(n),
            (self.dr[2] * p).dot(n),
            n.x,
            n.y,
            n.z,
        )
    }
}

/// Analytic partial derivatives of the point-to-plane residual w.r.t.
/// `(alpha_x, alpha_y, alpha_z, t_x, t_y, t_z)`. The translation block is
/// exactly `n`; `q` does not enter the derivative.
pub fn jacobian_point_to_plane(
    params: &ExtrinsicParams,
    p: &Vector3<f64>,
    _q: &Vector3<f64>,
    n: &Vector3<f64>,
) -> Vector6<f64> {
    Linearization::new(params).jacobian(p, n)
}

/// Gauss-Markov solve with default inner-loop settings.
pub fn solve_gauss_markov(
    bundle: &ResidualBundle,
    linearization_point: &ExtrinsicParams,
) -> Result<AdjustmentResult> {
    solve_gauss_markov_with(bundle, linearization_point, &SolveConfig::default())
}

/// Iterated linearization (Gauss-Newton, undamped but descent-guarded)
/// around `linearization_point`.
///
/// One weighted row is stacked per correspondence and one per estimated
/// parameter with a finite prior sigma; masked-fixed parameters are
/// eliminated from the unknown vector and returned bit-identical to their
/// prior values. The covariance is `sigma0^2 (A^T P A)^{-1}` expanded to
/// 6x6 with zero rows/cols for fixed parameters, with the a posteriori
/// variance factor clamped to 1 when the redundancy is zero or the
/// residuals vanish.
pub fn solve_gauss_markov_with(
    bundle: &ResidualBundle,
    linearization_point: &ExtrinsicParams,
    cfg: &SolveConfig,
) -> Result<AdjustmentResult> {
    if !(bundle.sigma_d > 0.0) {
        return Err(CalibError::InvalidConfig("sigma_d must be positive".into()));
    }
    let prior = &bundle.prior;
    let prior_vals = prior.values.to_array();
    let est: Vec<usize> = (0..6).filter(|&i| prior.estimate_mask[i]).collect();
    let m = est.len();

    let mut x = linearization_point.to_array();
    for i in 0..6 {
        if !prior.estimate_mask[i] {
            x[i] = prior_vals[i];
        }
    }

    let n_corr = bundle.correspondences.len();
    let n_prior_rows = est.iter().filter(|&&i| prior.sigmas[i].is_finite()).count();
    let rows = n_corr + n_prior_rows;

    if m == 0 {
        // nothing to estimate; report the residuals at the fixed parameters
        let params = ExtrinsicParams::from_array(x);
        let (mean, std) = residual_stats(&bundle.correspondences, &params);
        return Ok(AdjustmentResult {
            params,
            covariance: Matrix6::zeros(),
            residual_mean: mean,
            residual_std: std,
            num_correspondences: n_corr,
            num_iterations: 0,
            converged: true,
        });
    }
    if n_corr == 0 {
        // Exact fixed point: the prior residuals vanish at the prior values.
        let unobserved: Vec<String> = est
            .iter()
            .filter(|&&i| !prior.sigmas[i].is_finite())
            .map(|&i| PARAM_NAMES[i].to_string())
            .collect();
        if !unobserved.is_empty() {
            return Err(CalibError::RankDeficient { params: unobserved });
        }
        for &i in &est {
            x[i] = prior_vals[i];
        }
        let mut covariance = Matrix6::zeros();
        for &i in &est {
            covariance[(i, i)] = prior.sigmas[i] * prior.sigmas[i];
        }
        return Ok(AdjustmentResult {
            params: ExtrinsicParams::from_array(x),
            covariance,
            residual_mean: 0.0,
            residual_std: 0.0,
            num_correspondences: 0,
            num_iterations: 1,
            converged: true,
        });
    }
    if rows < m {
        return Err(CalibError::UnderDetermined { rows, unknowns: m });
    }

    let w_pp = 1.0 / (bundle.sigma_d * bundle.sigma_d);
    let prior_weight = |i: usize| 1.0 / (prior.sigmas[i] * prior.sigmas[i]);
    let prior_residual = |x: &[f64; 6], i: usize| {
        if i < 3 {
            wrap_angle(x[i] - prior_vals[i])
        } else {
            x[i] - prior_vals[i]
        }
    };

    let weighted_ssr = |x: &[f64; 6]| -> f64 {
        let lin = Linearization::new(&ExtrinsicParams::from_array(*x));
        let mut ssr = 0.0;
        for c in &bundle.correspondences {
            let r = lin.residual(&c.p, &c.q, &c.n);
            ssr += w_pp * r * r;
        }
        for &i in &est {
            if prior.sigmas[i].is_finite() {
                let e = prior_residual(x, i);
                ssr += prior_weight(i) * e * e;
            }
        }
        ssr
    };

    let assemble = |x: &[f64; 6]| -> (DMatrix<f64>, DVector<f64>) {
        let lin = Linearization::new(&ExtrinsicParams::from_array(*x));
        let mut n_mat = DMatrix::zeros(m, m);
        let mut b = DVector::zeros(m);
        for c in &bundle.correspondences {
            let r = lin.residual(&c.p, &c.q, &c.n);
            let j6 = lin.jacobian(&c.p, &c.n);
            for (ri, &pi) in est.iter().enumerate() {
                let a_i = j6[pi];
                b[ri] -= w_pp * r * a_i;
                for (ci, &pj) in est.iter().enumerate() {
                    n_mat[(ri, ci)] += w_pp * a_i * j6[pj];
                }
            }
        }
        for (ei, &i) in est.iter().enumerate() {
            if prior.sigmas[i].is_finite() {
                let w = prior_weight(i);
                n_mat[(ei, ei)] += w;
                b[ei] -= w * prior_residual(x, i);
            }
        }
        (n_mat, b)
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut ssr_current = weighted_ssr(&x);
    let ssr_initial = ssr_current;
    loop {
        if iterations >= cfg.max_iterations {
            break;
        }
        iterations += 1;
        let (n_mat, b) = assemble(&x);
        let chol = checked_cholesky(&n_mat, &est, cfg.condition_threshold)?;
        let delta = chol.solve(&b);

        let mut step_small = true;
        let mut x_try = x;
        for (ei, &i) in est.iter().enumerate() {
            let tol = if i < 3 { cfg.tol_angle } else { cfg.tol_translation };
            if delta[ei].abs() >= tol {
                step_small = false;
            }
            x_try[i] += delta[ei];
            if i < 3 {
                x_try[i] = wrap_angle(x_try[i]);
            }
        }
        let ssr_try = weighted_ssr(&x_try);
        if ssr_try > ssr_current {
            // overshoot: keep the previous iterate
            converged = step_small;
            break;
        }
        x = x_try;
        ssr_current = ssr_try;
        if step_small {
            converged = true;
            break;
        }
    }

    let (n_final, _) = assemble(&x);
    let chol = checked_cholesky(&n_final, &est, cfg.condition_threshold)?;
    let redundancy = rows as i64 - m as i64;
    let ssr_final = weighted_ssr(&x);
    log::trace!(
        "gauss-markov: {iterations} iterations, weighted ssr {ssr_initial:.6e} -> {ssr_final:.6e}"
    );
    let sigma0_sq = if redundancy > 0 && ssr_final > 0.0 {
        ssr_final / redundancy as f64
    } else {
        1.0
    };
    let cov_est = chol.inverse() * sigma0_sq;
    let mut covariance = Matrix6::zeros();
    for (ei, &i) in est.iter().enumerate() {
        for (ej, &j) in est.iter().enumerate() {
            covariance[(i, j)] = cov_est[(ei, ej)];
        }
    }

    let params = ExtrinsicParams::from_array(x);
    let (mean, std) = residual_stats(&bundle.correspondences, &params);
    Ok(AdjustmentResult {
        params,
        covariance,
        residual_mean: mean,
        residual_std: std,
        num_correspondences: n_corr,
        num_iterations: iterations,
        converged,
    })
}

/// Reject unusable normal matrices. The condition number is evaluated on
/// the diagonally normalized (unit-diagonal) matrix so the verdict does not
/// depend on the overall weight scale or on the rad-vs-meter units of the
/// parameters; exactly-zero diagonal entries name their parameter directly,
/// otherwise the offending direction comes from the smallest-eigenvalue
/// eigenvector.
fn checked_cholesky(
    n_mat: &DMatrix<f64>,
    est: &[usize],
    condition_threshold: f64,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let m = n_mat.nrows();
    let unobserved: Vec<String> = (0..m)
        .filter(|&i| !(n_mat[(i, i)] > 0.0))
        .map(|i| PARAM_NAMES[est[i]].to_string())
        .collect();
    if !unobserved.is_empty() {
        return Err(CalibError::RankDeficient { params: unobserved });
    }
    let scale: Vec<f64> = (0..m).map(|i| n_mat[(i, i)].sqrt()).collect();
    let mut normalized = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            normalized[(i, j)] = n_mat[(i, j)] / (scale[i] * scale[j]);
        }
    }
    let eig = normalized.symmetric_eigen();
    let mut i_min = 0;
    let mut l_max = eig.eigenvalues[0];
    for i in 1..m {
        if eig.eigenvalues[i] < eig.eigenvalues[i_min] {
            i_min = i;
        }
        l_max = l_max.max(eig.eigenvalues[i]);
    }
    let l_min = eig.eigenvalues[i_min];
    if !(l_min > 0.0) || l_max / l_min > condition_threshold {
        let v = eig.eigenvectors.column(i_min);
        let v_max = v.iter().fold(0.0_f64, |acc, &c| acc.max(c.abs()));
        let params = est
            .iter()
            .enumerate()
            .filter(|&(ei, _)| v[ei].abs() >= 0.25 * v_max)
            .map(|(_, &i)| PARAM_NAMES[i].to_string())
            .collect();
        return Err(CalibError::RankDeficient { params });
    }
    n_mat.clone().cholesky().ok_or_else(|| CalibError::RankDeficient {
        params: est.iter().map(|&i| PARAM_NAMES[i].to_string()).collect(),
    })
}

fn residual_stats(correspondences: &[Correspondence], params: &ExtrinsicParams) -> (f64, f64) {
    if correspondences.is_empty() {
        return (0.0, 0.0);
    }
    let lin = Linearization::new(params);
    let residuals: Vec<f64> = correspondences
        .iter()
        .map(|c| lin.residual(&c.p, &c.q, &c.n))
        .collect();
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    use crate::transform::compose_rotation;

    fn corr(p: Vector3<f64>, q: Vector3<f64>, n: Vector3<f64>) -> Correspondence {
        Correspondence {
            ref_index: 0,
            mov_index: 0,
            q,
            n,
            p,
            signed_distance: 0.0,
        }
    }

    #[test]
    fn residual_trivials() {
        let id = ExtrinsicParams::identity();
        let z = Vector3::zeros();
        assert_eq!(point_to_plane_residual(&id, &z, &z, &Vector3::x()), 0.0);
        assert_eq!(
            point_to_plane_residual(&id, &Vector3::x(), &z, &Vector3::x()),
            1.0
        );
        // in-plane slide is free
        assert_eq!(
            point_to_plane_residual(
                &id,
                &Vector3::new(1.0, 5.0, 7.0),
                &Vector3::new(0.0, 5.0, 7.0),
                &Vector3::y()
            ),
            0.0
        );
    }

    #[test]
    fn robust_sigma_hand_case() {
        let sigma = robust_sigma(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(sigma, 1.4826);
    }

    #[test]
    fn robust_sigma_floor_and_empty() {
        assert_eq!(robust_sigma(&[3.5, 3.5, 3.5]).unwrap(), SIGMA_FLOOR);
        assert!(robust_sigma(&[]).is_err());
    }

    #[test]
    fn robust_sigma_mad_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let samples: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let sigma = robust_sigma(&samples).unwrap();
        assert!((sigma - 0.02).abs() < 0.001, "sigma {sigma}");
    }

    #[test]
    fn jacobian_translation_block_is_normal() {
        let params = ExtrinsicParams::new(0.3, -0.7, 1.2, 0.5, -0.1, 2.0);
        let n = Vector3::new(0.6, 0.0, 0.8);
        let j = jacobian_point_to_plane(&params, &Vector3::new(1.0, 2.0, 3.0), &Vector3::zeros(), &n);
        assert_eq!(j[3], n.x);
        assert_eq!(j[4], n.y);
        assert_eq!(j[5], n.z);
    }

    #[test]
    fn jacobian_axis_point_immobile() {
        // p on the x axis under a pure x rotation: the alpha_x partial is 0
        let params = ExtrinsicParams::new(0.4, 0.0, 0.0, 0.0, 0.0, 0.0);
        let p = Vector3::new(2.5, 0.0, 0.0);
        let n = Vector3::new(0.0, 1.0, 0.0);
        let j = jacobian_point_to_plane(&params, &p, &Vector3::zeros(), &n);
        assert_eq!(j[0], 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let step = 1e-6;
        for _ in 0..200 {
            let params = ExtrinsicParams::new(
                rng.gen_range(-PI..PI),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-PI..PI),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let p = Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let q = Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let n = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let j = jacobian_point_to_plane(&params, &p, &q, &n);
            let x0 = params.to_array();
            for i in 0..6 {
                let mut hi = x0;
                let mut lo = x0;
                hi[i] += step;
                lo[i] -= step;
                let r_hi = point_to_plane_residual(&ExtrinsicParams::from_array(hi), &p, &q, &n);
                let r_lo = point_to_plane_residual(&ExtrinsicParams::from_array(lo), &p, &q, &n);
                let fd = (r_hi - r_lo) / (2.0 * step);
                let scale = j[i].abs().max(fd.abs()).max(1.0);
                assert!(
                    (j[i] - fd).abs() <= 1e-5 * scale,
                    "partial {i}: analytic {} vs fd {fd}",
                    j[i]
                );
            }
        }
    }

    #[test]
    fn prior_only_solve_is_bit_exact_fixed_point() {
        let values = ExtrinsicParams::new(0.02, -0.01, 0.03, 0.5, -0.25, 1.0);
        let prior = ParamPrior::new(values, [0.01; 6], [true; 6]).unwrap();
        let bundle = ResidualBundle::new(Vec::new(), prior, 1.0).unwrap();
        let start = ExtrinsicParams::new(0.1, 0.1, 0.1, 0.0, 0.0, 0.0);
        let result = solve_gauss_markov(&bundle, &start).unwrap();
        assert_eq!(result.params, values);
        assert!(result.converged);
        for i in 0..6 {
            assert_relative_eq!(result.covariance[(i, i)], 1e-4, max_relative = 1e-12);
        }
    }

    #[test]
    fn prior_only_with_unobserved_parameter_is_rank_deficient() {
        let mut sigmas = [0.01; 6];
        sigmas[2] = f64::INFINITY;
        let prior = ParamPrior::new(ExtrinsicParams::identity(), sigmas, [true; 6]).unwrap();
        let bundle = ResidualBundle::new(Vec::new(), prior, 1.0).unwrap();
        match solve_gauss_markov(&bundle, &ExtrinsicParams::identity()) {
            Err(CalibError::RankDeficient { params }) => assert_eq!(params, vec!["alpha_z"]),
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    /// Noise-free correspondences on three orthogonal planes with a known
    /// offset: the adjustment recovers the offset almost exactly.
    fn three_plane_bundle(truth: &ExtrinsicParams, prior: ParamPrior) -> ResidualBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = truth.rotation();
        let t = truth.translation();
        let mut correspondences = Vec::new();
        let planes = [
            (Vector3::z(), 0.0_f64),  // z = 0
            (Vector3::x(), 5.0_f64),  // x = 5
            (Vector3::y(), -4.0_f64), // y = -4
        ];
        for (normal, offset) in planes {
            for _ in 0..10 {
                let a = rng.gen_range(-3.0..3.0);
                let b = rng.gen_range(-3.0..3.0);
                // q on the plane
                let q = if normal.x == 1.0 {
                    Vector3::new(offset, a, b)
                } else if normal.y == 1.0 {
                    Vector3::new(a, offset, b)
                } else {
                    Vector3::new(a, b, offset)
                };
                // p such that truth maps p exactly onto q
                let p = r.transpose() * (q - t);
                correspondences.push(corr(p, q, normal));
            }
        }
        ResidualBundle::new(correspondences, prior, 0.01).unwrap()
    }

    #[test]
    fn three_plane_exact_recovery() {
        let truth = ExtrinsicParams::new(
            2.0_f64.to_radians(),
            -1.0_f64.to_radians(),
            3.0_f64.to_radians(),
            0.05,
            -0.03,
            0.10,
        );
        let prior = ParamPrior::unconstrained(ExtrinsicParams::identity());
        let bundle = three_plane_bundle(&truth, prior);
        let result = solve_gauss_markov(&bundle, &ExtrinsicParams::identity()).unwrap();
        let d = crate::transform::param_delta(&result.params, &truth);
        for v in d {
            assert!(v.abs() < 1e-9, "residual offset {v}");
        }
        assert!(result.residual_std < 1e-9);
        assert!(result.converged);
    }

    #[test]
    fn single_plane_without_priors_is_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let correspondences: Vec<Correspondence> = (0..50)
            .map(|_| {
                let q = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 0.0);
                corr(q, q, Vector3::z())
            })
            .collect();
        let prior = ParamPrior::unconstrained(ExtrinsicParams::identity());
        let bundle = ResidualBundle::new(correspondences, prior, 0.01).unwrap();
        match solve_gauss_markov(&bundle, &ExtrinsicParams::identity()) {
            Err(CalibError::RankDeficient { params }) => {
                assert!(!params.is_empty());
                for p in &params {
                    assert!(
                        ["t_x", "t_y", "alpha_z"].contains(&p.as_str()),
                        "unexpected direction {p}"
                    );
                }
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn single_plane_with_priors_stays_near_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let correspondences: Vec<Correspondence> = (0..50)
            .map(|_| {
                let q = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 0.0);
                corr(q, q, Vector3::z())
            })
            .collect();
        let prior = ParamPrior::new(ExtrinsicParams::identity(), [0.01; 6], [true; 6]).unwrap();
        let bundle = ResidualBundle::new(correspondences, prior, 0.01).unwrap();
        let result = solve_gauss_markov(&bundle, &ExtrinsicParams::identity()).unwrap();
        for (i, name) in [(3usize, "t_x"), (4, "t_y"), (2, "alpha_z")] {
            let v = result.params.to_array()[i];
            assert!(v.abs() <= 3.0 * 0.01, "{name} strayed from prior: {v}");
        }
    }

    #[test]
    fn masked_parameters_are_bit_identical() {
        let truth = ExtrinsicParams::new(0.02, -0.01, 0.03, 0.05, -0.03, 0.10);
        let prior_values = ExtrinsicParams::new(0.0, 0.0, 0.0, 0.05, -0.03, 0.10);
        let mask = [true, true, true, false, false, false];
        let prior = ParamPrior::new(prior_values, [f64::INFINITY; 6], mask).unwrap();
        let bundle = three_plane_bundle(&truth, prior);
        let result = solve_gauss_markov(&bundle, &ExtrinsicParams::identity()).unwrap();
        assert_eq!(result.params.t_x, prior_values.t_x);
        assert_eq!(result.params.t_y, prior_values.t_y);
        assert_eq!(result.params.t_z, prior_values.t_z);
        for i in 3..6 {
            for j in 0..6 {
                assert_eq!(result.covariance[(i, j)], 0.0);
                assert_eq!(result.covariance[(j, i)], 0.0);
            }
        }
        // angles still recovered
        for i in 0..3 {
            assert!(
                (result.params.to_array()[i] - truth.to_array()[i]).abs() < 1e-9,
                "angle {i} not recovered"
            );
        }
    }

    #[test]
    fn under_determined_is_an_error() {
        let correspondences = vec![corr(Vector3::x(), Vector3::x(), Vector3::z()); 3];
        let prior = ParamPrior::unconstrained(ExtrinsicParams::identity());
        let bundle = ResidualBundle::new(correspondences, prior, 0.01).unwrap();
        assert!(matches!(
            solve_gauss_markov(&bundle, &ExtrinsicParams::identity()),
            Err(CalibError::UnderDetermined { rows: 3, unknowns: 6 })
        ));
    }

    #[test]
    fn tightening_prior_pulls_estimate_monotonically() {
        // single-parameter case: only alpha_x estimated, data prefers 0.1 rad
        let a_data = 0.1_f64;
        let r = compose_rotation(a_data, 0.0, 0.0);
        let correspondences: Vec<Correspondence> = (1..=5)
            .map(|i| {
                let p = Vector3::new(0.3 * i as f64, 2.0, 0.0);
                corr(p, r * p, Vector3::z())
            })
            .collect();
        let mask = [true, false, false, false, false, false];
        let mut previous = a_data;
        for sigma in [1.0, 0.05, 0.01, 0.002, 0.0005] {
            let mut sigmas = [f64::INFINITY; 6];
            sigmas[0] = sigma;
            let prior = ParamPrior::new(ExtrinsicParams::identity(), sigmas, mask).unwrap();
            let bundle =
                ResidualBundle::new(correspondences.clone(), prior, 0.01).unwrap();
            let result = solve_gauss_markov(&bundle, &ExtrinsicParams::identity()).unwrap();
            let a = result.params.alpha_x;
            assert!(
                a <= previous + 1e-12 && a >= 0.0,
                "estimate {a} not between 0 and previous {previous}"
            );
            previous = a;
        }
        assert!(previous < 0.01, "tight prior should dominate: {previous}");
    }

    #[test]
    fn descent_and_covariance_properties() {
        let truth = ExtrinsicParams::new(0.03, 0.02, -0.04, 0.1, 0.05, -0.08);
        let prior = ParamPrior::new(ExtrinsicParams::identity(), [0.05; 6], [true; 6]).unwrap();
        let bundle = three_plane_bundle(&truth, prior);
        let start = ExtrinsicParams::identity();
        let result = solve_gauss_markov(&bundle, &start).unwrap();

        let ssr = |params: &ExtrinsicParams| -> f64 {
            let w = 1.0 / (bundle.sigma_d * bundle.sigma_d);
            let mut s = 0.0;
            for c in &bundle.correspondences {
                let r = point_to_plane_residual(params, &c.p, &c.q, &c.n);
                s += w * r * r;
            }
            for i in 0..6 {
                let e = params.to_array()[i] - bundle.prior.values.to_array()[i];
                s += e * e / (0.05 * 0.05);
            }
            s
        };
        assert!(ssr(&result.params) <= ssr(&start));

        // estimated-block covariance is symmetric positive definite
        let c = result.covariance;
        for i in 0..6 {
            for j in 0..6 {
                assert_relative_eq!(c[(i, j)], c[(j, i)], max_relative = 1e-9);
            }
            assert!(c[(i, i)] > 0.0);
        }
        let eig = c.symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        for &l in eig.eigenvalues.iter() {
            assert!(l > -1e-9 * max_eig);
        }
    }
}
