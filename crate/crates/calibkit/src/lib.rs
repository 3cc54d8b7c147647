//! Continuous, target-free extrinsic calibration of point-cloud sensors.
//!
//! A movable sensor is calibrated against a reference sensor by matching the
//! point clouds both acquire from static viewpoints. Each calibration runs a
//! point-to-plane ICP whose optimization step is a weighted Gauss-Markov
//! adjustment over two residual types: point-to-plane distances between
//! corresponding points, and differences to prior observations of the six
//! transformation parameters. The a posteriori covariance of one site feeds
//! the priors of the next, so the parameter precision improves as the robot
//! visits new sites, until it drops below a user-defined stop threshold.
//!
//! Module map:
//!
//! * [`cloud`] / [`transform`] — domain types and rigid-transform algebra
//! * [`features`] — per-point normal vectors and planarity
//! * [`filters`] — pre-matching filter stack (range, intensity, planarity, voxel thin-out)
//! * [`matching`] — correspondence engine and the ICP outer loop
//! * [`adjust`] — the Gauss-Markov adjustment (optimization step)
//! * [`session`] — motion-state detection and the multi-site refinement loop
//! * [`synth`] — synthetic planar worlds with exact ground truth
//!
//! # Conventions
//!
//! Angles are radians, distances meters. The rotation convention is intrinsic
//! x-y-z: `R = Rz(alpha_z) * Ry(alpha_y) * Rx(alpha_x)`, applied to column
//! vectors. Parameters always describe the transform from the movable sensor
//! frame into the reference sensor frame.

// validations use `!(x > 0.0)` so that NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;
pub use nalgebra::{Matrix6, Vector3};

pub mod adjust;
pub mod cloud;
pub mod features;
pub mod filters;
pub mod matching;
pub mod session;
pub mod spatial;
pub mod synth;
pub mod transform;

pub use adjust::{
    jacobian_point_to_plane, point_to_plane_residual, robust_sigma, solve_gauss_markov,
    AdjustmentResult, ResidualBundle, SolveConfig,
};
pub use cloud::{ExtrinsicParams, ParamPrior, Point, PointCloud, PARAM_NAMES};
pub use features::{estimate_normals_planarity, NeighborhoodConfig};
pub use filters::{apply_filters, FilterConfig};
pub use matching::{run_icp, Correspondence, MatchConfig};
pub use session::{
    motion_state, run_session, run_site, CalibrationState, MotionEvent, PipelineConfig, Scenario,
    SessionConfig, SessionReport, SiteClouds, SiteRecord, TwistSample,
};
pub use synth::{generate_scene, perturb, render_view, PlaneSpec, SceneSpec};
pub use transform::{apply_transform, compose_rotation, euler_from_rotation, invert_params};

/// Errors shared across the calibration pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibError {
    #[error("point cloud is empty, no data to process")]
    EmptyCloud,
    #[error("cloud has {got} points but at least {needed} are required")]
    InsufficientData { got: usize, needed: usize },
    #[error("filter stage '{stage}' requires the '{attribute}' attribute which the cloud lacks")]
    MissingAttribute { stage: String, attribute: String },
    #[error("filter stage '{stage}' removed all points")]
    EmptyFilterResult { stage: String },
    #[error("reference and movable clouds do not overlap")]
    NoOverlap,
    #[error("scene unsuitable: only {survivors} correspondences survived rejection, {needed} required")]
    SceneUnsuitable { survivors: usize, needed: usize },
    #[error("rank-deficient adjustment: unobservable parameter combination involving {}", .params.join(", "))]
    RankDeficient { params: Vec<String> },
    #[error("under-determined adjustment: {rows} observation rows for {unknowns} unknowns")]
    UnderDetermined { rows: usize, unknowns: usize },
    #[error("twist timestamps must be strictly increasing (sample {index})")]
    NonMonotonicTimestamps { index: usize },
    #[error("calibration session is already done")]
    SessionDone,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, CalibError>;
