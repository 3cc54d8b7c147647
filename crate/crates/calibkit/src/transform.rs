//! Rigid-transform algebra under the intrinsic x-y-z Euler convention.
//!
//! The rotation matrix is composed as `R = Rz(alpha_z) * Ry(alpha_y) * Rx(alpha_x)`
//! and applied to column vectors. A transform maps a point `p` of the movable
//! frame into the reference frame as `R * p + t`.

use nalgebra::Matrix3;

use crate::cloud::{wrap_angle, ExtrinsicParams, PointCloud};
use crate::{CalibError, Result};

/// Rotation matrix composed from the three Euler angles,
/// `R = Rz(alpha_z) * Ry(alpha_y) * Rx(alpha_x)`.
pub fn compose_rotation(alpha_x: f64, alpha_y: f64, alpha_z: f64) -> Matrix3<f64> {
    let (sa, ca) = alpha_x.sin_cos();
    let (sb, cb) = alpha_y.sin_cos();
    let (sc, cc) = alpha_z.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Euler angles `(alpha_x, alpha_y, alpha_z)` of a rotation matrix under the
/// convention of [`compose_rotation`].
///
/// At gimbal lock (`|alpha_y| = pi/2`, i.e. `|R[(2,0)]| = 1`) the split
/// between `alpha_x` and `alpha_z` is not unique; `alpha_x` is set to zero.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    // R[(2,0)] = -sin(alpha_y)
    let sy = -r[(2, 0)];
    if sy.abs() < 1.0 - 1e-12 {
        let alpha_y = sy.asin();
        let alpha_x = r[(2, 1)].atan2(r[(2, 2)]);
        let alpha_z = r[(1, 0)].atan2(r[(0, 0)]);
        (alpha_x, alpha_y, alpha_z)
    } else {
        let alpha_y = if sy > 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        // cos(alpha_y) = 0: only alpha_z -/+ alpha_x is determined.
        let alpha_z = (-r[(0, 1)]).atan2(r[(1, 1)]);
        (0.0, alpha_y, alpha_z)
    }
}

/// Transform every point into the reference frame: positions to `R*p + t`,
/// normals to `R*n`; intensity and planarity unchanged.
pub fn apply_transform(cloud: &PointCloud, params: &ExtrinsicParams) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(CalibError::EmptyCloud);
    }
    let r = params.rotation();
    let t = params.translation();
    let mut out = cloud.clone();
    out.set_positions_unchecked(cloud.positions().iter().map(|p| r * p + t).collect());
    if let Some(normals) = cloud.normals() {
        out.set_normals_unchecked(normals.iter().map(|n| r * n).collect());
    }
    Ok(out)
}

/// Parameters of the inverse transform: `R' = R^T`, `t' = -R^T t`, with the
/// angles re-extracted from `R'`. Gimbal-lock inputs are handled by the
/// extraction convention of [`euler_from_rotation`]; no error is raised.
pub fn invert_params(params: &ExtrinsicParams) -> ExtrinsicParams {
    let r = params.rotation();
    let rt = r.transpose();
    let t_inv = -(rt * params.translation());
    let (ax, ay, az) = euler_from_rotation(&rt);
    ExtrinsicParams::new(ax, ay, az, t_inv.x, t_inv.y, t_inv.z)
}

/// Left-composition: the transform applying `first`, then `second`.
pub fn compose_params(second: &ExtrinsicParams, first: &ExtrinsicParams) -> ExtrinsicParams {
    let r = second.rotation() * first.rotation();
    let t = second.rotation() * first.translation() + second.translation();
    let (ax, ay, az) = euler_from_rotation(&r);
    ExtrinsicParams::new(ax, ay, az, t.x, t.y, t.z)
}

/// Component-wise difference `a - b` with angle differences wrapped
/// into (-pi, pi].
pub fn param_delta(a: &ExtrinsicParams, b: &ExtrinsicParams) -> [f64; 6] {
    let a = a.to_array();
    let b = b.to_array();
    let mut d = [0.0; 6];
    for i in 0..3 {
        d[i] = wrap_angle(a[i] - b[i]);
    }
    for i in 3..6 {
        d[i] = a[i] - b[i];
    }
    d
}
