//! Point clouds and the six extrinsic calibration parameters.
//!
//! Clouds are stored column-wise (one vector per attribute) so the schema
//! invariant "all points carry the same attributes" holds by construction.

use nalgebra::Vector3;

use crate::{CalibError, Result};

/// Names of the six parameters, in estimation order.
pub const PARAM_NAMES: [&str; 6] = ["alpha_x", "alpha_y", "alpha_z", "t_x", "t_y", "t_z"];

/// Tolerance on the unit-norm invariant of normal vectors.
pub const NORMAL_UNIT_TOL: f64 = 1e-9;

/// A single point with its optional per-point attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    /// Position in the cloud's sensor frame, meters.
    pub position: Vector3<f64>,
    /// Sensor-native intensity, if the sensor reports one.
    pub intensity: Option<f64>,
    /// Unit normal of the local surface.
    pub normal: Option<Vector3<f64>>,
    /// Eigenvalue-based planarity in [0, 1]; 1 is a locally perfect plane.
    pub planarity: Option<f64>,
}

impl Point {
    pub fn new(position: Vector3<f64>) -> Self {
        Point {
            position,
            intensity: None,
            normal: None,
            planarity: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(n) = &self.normal {
            if (n.norm() - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(CalibError::InvalidConfig(format!(
                    "normal has norm {}, expected 1 within {NORMAL_UNIT_TOL}",
                    n.norm()
                )));
            }
        }
        if let Some(p) = self.planarity {
            if !(0.0..=1.0).contains(&p) {
                return Err(CalibError::InvalidConfig(format!(
                    "planarity {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// An ordered set of points in a named sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    intensities: Option<Vec<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    planarities: Option<Vec<f64>>,
    frame_id: String,
    acquired_at_site: Option<usize>,
}

impl PointCloud {
    /// Cloud with positions only.
    pub fn from_positions(positions: Vec<Vector3<f64>>, frame_id: impl Into<String>) -> Self {
        PointCloud {
            positions,
            intensities: None,
            normals: None,
            planarities: None,
            frame_id: frame_id.into(),
            acquired_at_site: None,
        }
    }

    /// Build from full points, enforcing a uniform attribute schema.
    pub fn from_points(points: Vec<Point>, frame_id: impl Into<String>) -> Result<Self> {
        let frame_id = frame_id.into();
        let Some(first) = points.first() else {
            return Ok(PointCloud::from_positions(Vec::new(), frame_id));
        };
        let has_intensity = first.intensity.is_some();
        let has_normal = first.normal.is_some();
        let has_planarity = first.planarity.is_some();

        let mut cloud = PointCloud {
            positions: Vec::with_capacity(points.len()),
            intensities: has_intensity.then(|| Vec::with_capacity(points.len())),
            normals: has_normal.then(|| Vec::with_capacity(points.len())),
            planarities: has_planarity.then(|| Vec::with_capacity(points.len())),
            frame_id,
            acquired_at_site: None,
        };
        for (i, p) in points.into_iter().enumerate() {
            p.validate()?;
            if p.intensity.is_some() != has_intensity
                || p.normal.is_some() != has_normal
                || p.planarity.is_some() != has_planarity
            {
                return Err(CalibError::InvalidConfig(format!(
                    "point {i} does not match the attribute schema of point 0"
                )));
            }
            cloud.positions.push(p.position);
            if let Some(v) = &mut cloud.intensities {
                v.push(p.intensity.unwrap());
            }
            if let Some(v) = &mut cloud.normals {
                v.push(p.normal.unwrap());
            }
            if let Some(v) = &mut cloud.planarities {
                v.push(p.planarity.unwrap());
            }
        }
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn set_frame_id(&mut self, id: impl Into<String>) {
        self.frame_id = id.into();
    }

    pub fn acquired_at_site(&self) -> Option<usize> {
        self.acquired_at_site
    }

    pub fn set_acquired_at_site(&mut self, site: Option<usize>) {
        self.acquired_at_site = site;
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn intensities(&self) -> Option<&[f64]> {
        self.intensities.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn planarities(&self) -> Option<&[f64]> {
        self.planarities.as_deref()
    }

    pub fn has_intensity(&self) -> bool {
        self.intensities.is_some()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn has_planarity(&self) -> bool {
        self.planarities.is_some()
    }

    /// View of the i-th point. Panics if `i` is out of range.
    pub fn point(&self, i: usize) -> Point {
        Point {
            position: self.positions[i],
            intensity: self.intensities.as_ref().map(|v| v[i]),
            normal: self.normals.as_ref().map(|v| v[i]),
            planarity: self.planarities.as_ref().map(|v| v[i]),
        }
    }

    /// Attach intensities, one per point.
    pub fn with_intensities(mut self, intensities: Vec<f64>) -> Result<Self> {
        if intensities.len() != self.len() {
            return Err(CalibError::InvalidConfig(
                "attribute length does not match point count".into(),
            ));
        }
        self.intensities = Some(intensities);
        Ok(self)
    }

    /// Attach normals and planarities, one per point.
    pub fn with_normals_planarity(
        mut self,
        normals: Vec<Vector3<f64>>,
        planarities: Vec<f64>,
    ) -> Result<Self> {
        if normals.len() != self.len() || planarities.len() != self.len() {
            return Err(CalibError::InvalidConfig(
                "attribute length does not match point count".into(),
            ));
        }
        for n in &normals {
            if (n.norm() - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(CalibError::InvalidConfig(format!(
                    "normal has norm {}, expected 1 within {NORMAL_UNIT_TOL}",
                    n.norm()
                )));
            }
        }
        for &p in &planarities {
            if !(0.0..=1.0).contains(&p) {
                return Err(CalibError::InvalidConfig(format!(
                    "planarity {p} outside [0, 1]"
                )));
            }
        }
        self.normals = Some(normals);
        self.planarities = Some(planarities);
        Ok(self)
    }

    /// Replace positions without re-validation. Length must match.
    pub(crate) fn set_positions_unchecked(&mut self, positions: Vec<Vector3<f64>>) {
        debug_assert_eq!(positions.len(), self.positions.len());
        self.positions = positions;
    }

    /// Replace normals without re-validation. Only valid if the cloud
    /// already carries normals of the same length.
    pub(crate) fn set_normals_unchecked(&mut self, normals: Vec<Vector3<f64>>) {
        debug_assert_eq!(Some(normals.len()), self.normals.as_ref().map(Vec::len));
        self.normals = Some(normals);
    }

    /// New cloud keeping the points at `indices` (attributes included),
    /// in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            intensities: self
                .intensities
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            planarities: self
                .planarities
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            frame_id: self.frame_id.clone(),
            acquired_at_site: self.acquired_at_site,
        }
    }
}

/// Normalize an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// The six unknowns of the extrinsic calibration: three Euler angles
/// (radians) and three translation components (meters), movable frame to
/// reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicParams {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub alpha_z: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
}

impl ExtrinsicParams {
    /// Angles are wrapped into (-pi, pi].
    pub fn new(alpha_x: f64, alpha_y: f64, alpha_z: f64, t_x: f64, t_y: f64, t_z: f64) -> Self {
        ExtrinsicParams {
            alpha_x: wrap_angle(alpha_x),
            alpha_y: wrap_angle(alpha_y),
            alpha_z: wrap_angle(alpha_z),
            t_x,
            t_y,
            t_z,
        }
    }

    pub fn identity() -> Self {
        ExtrinsicParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    /// Components in estimation order `[alpha_x, alpha_y, alpha_z, t_x, t_y, t_z]`.
    pub fn to_array(self) -> [f64; 6] {
        [
            self.alpha_x,
            self.alpha_y,
            self.alpha_z,
            self.t_x,
            self.t_y,
            self.t_z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        ExtrinsicParams::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.t_x, self.t_y, self.t_z)
    }

    pub fn rotation(&self) -> nalgebra::Matrix3<f64> {
        crate::transform::compose_rotation(self.alpha_x, self.alpha_y, self.alpha_z)
    }
}

/// Observed initial values of the six parameters with per-component
/// standard deviations and an estimate/fix mask.
///
/// A sigma of `f64::INFINITY` means the component is unconstrained (no prior
/// observation row is added for it). Components with `estimate_mask = false`
/// are held fixed at their prior value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPrior {
    pub values: ExtrinsicParams,
    pub sigmas: [f64; 6],
    pub estimate_mask: [bool; 6],
}

impl ParamPrior {
    pub fn new(values: ExtrinsicParams, sigmas: [f64; 6], estimate_mask: [bool; 6]) -> Result<Self> {
        let vals = values.to_array();
        for i in 0..6 {
            if !vals[i].is_finite() {
                return Err(CalibError::InvalidConfig(format!(
                    "prior value for {} is not finite",
                    PARAM_NAMES[i]
                )));
            }
            if sigmas[i].is_nan() || sigmas[i] <= 0.0 {
                return Err(CalibError::InvalidConfig(format!(
                    "prior sigma for {} must be positive (or infinite for unconstrained)",
                    PARAM_NAMES[i]
                )));
            }
        }
        Ok(ParamPrior {
            values,
            sigmas,
            estimate_mask,
        })
    }

    /// All six parameters estimated, no prior observations.
    pub fn unconstrained(values: ExtrinsicParams) -> Self {
        ParamPrior {
            values,
            sigmas: [f64::INFINITY; 6],
            estimate_mask: [true; 6],
        }
    }

    /// True if component `i` contributes a prior observation row.
    pub fn has_observation(&self, i: usize) -> bool {
        self.estimate_mask[i] && self.sigmas[i].is_finite()
    }
}
