//! The online calibration procedure: motion-state detection, delayed
//! trigger, per-site calibration with a precision-gated update, and the
//! global stop criterion.
//!
//! Each time the robot becomes static, a calibration window opens after a
//! trigger delay and an accumulation period. The clouds of that window run
//! through features -> filters -> ICP with the running estimate as prior.
//! A site's result replaces the running estimate only if it converged and
//! no estimated parameter's sigma got worse than the gate allows; the
//! session is done once every estimated parameter's sigma is below its stop
//! threshold.

use crate::adjust::AdjustmentResult;
use crate::cloud::{ExtrinsicParams, ParamPrior, PointCloud};
use crate::features::{estimate_normals_planarity, NeighborhoodConfig};
use crate::filters::{apply_filters, FilterConfig};
use crate::matching::{run_icp, MatchConfig};
use crate::{CalibError, Result};

/// One reading of the robot's twist magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistSample {
    /// Seconds.
    pub timestamp: f64,
    /// Meters per second, non-negative.
    pub linear_speed: f64,
    /// Radians per second, non-negative.
    pub angular_speed: f64,
}

/// Transition of the robot's motion state, stamped with the sample that
/// caused it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionEvent {
    BecameStatic(f64),
    BecameMoving(f64),
}

/// Session-level thresholds and timings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    /// Static when linear speed is below this, m/s.
    pub static_linear_threshold: f64,
    /// Static when angular speed is below this, rad/s.
    pub static_angular_threshold: f64,
    /// Delay between becoming static and the start of accumulation, s.
    pub trigger_delay: f64,
    /// Length of the accumulation window, s.
    pub accumulation_duration: f64,
    /// Stop threshold on angle sigmas, radians.
    pub stop_sigma_angles: f64,
    /// Stop threshold on translation sigmas, meters.
    pub stop_sigma_translation: f64,
    /// A site is accepted only if every estimated-parameter sigma is at most
    /// this factor times the current sigma.
    pub update_gate_factor: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            static_linear_threshold: 0.05,
            static_angular_threshold: 0.02,
            trigger_delay: 2.0,
            accumulation_duration: 2.0,
            stop_sigma_angles: 0.002,
            stop_sigma_translation: 0.01,
            update_gate_factor: 1.0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.static_linear_threshold,
            self.static_angular_threshold,
            self.trigger_delay,
            self.accumulation_duration,
            self.stop_sigma_angles,
            self.stop_sigma_translation,
            self.update_gate_factor,
        ];
        if positive.iter().any(|v| !(v > &0.0)) {
            return Err(CalibError::InvalidConfig(
                "all session parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Emit `BecameStatic` when both speeds drop below their thresholds and
/// `BecameMoving` when either exceeds twice its threshold (hysteresis
/// against chatter). The stream starts in the moving state.
pub fn motion_state(samples: &[TwistSample], cfg: &SessionConfig) -> Result<Vec<MotionEvent>> {
    cfg.validate()?;
    let mut events = Vec::new();
    let mut is_static = false;
    let mut last_t = f64::NEG_INFINITY;
    for (index, s) in samples.iter().enumerate() {
        if s.timestamp <= last_t {
            return Err(CalibError::NonMonotonicTimestamps { index });
        }
        last_t = s.timestamp;
        if s.linear_speed < 0.0 || s.angular_speed < 0.0 {
            return Err(CalibError::InvalidConfig(format!(
                "twist speeds must be non-negative (sample {index})"
            )));
        }
        if is_static {
            if s.linear_speed > 2.0 * cfg.static_linear_threshold
                || s.angular_speed > 2.0 * cfg.static_angular_threshold
            {
                is_static = false;
                events.push(MotionEvent::BecameMoving(s.timestamp));
            }
        } else if s.linear_speed < cfg.static_linear_threshold
            && s.angular_speed < cfg.static_angular_threshold
        {
            is_static = true;
            events.push(MotionEvent::BecameStatic(s.timestamp));
        }
    }
    Ok(events)
}

/// Outcome of one calibration site, as logged and reported.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteRecord {
    /// Zero-based site index.
    pub site: usize,
    /// Time the calibration window closed, seconds; 0 outside a session.
    pub timestamp: f64,
    pub num_correspondences: usize,
    pub residual_mean: Option<f64>,
    pub residual_std: Option<f64>,
    /// Running parameter values after this site.
    pub params: ExtrinsicParams,
    /// Running per-parameter sigmas after this site.
    pub sigmas: [f64; 6],
    pub accepted: bool,
    pub failure: Option<String>,
}

/// Per-sensor-pair running estimate with its history.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    /// (reference sensor id, movable sensor id)
    pub pair_id: (String, String),
    /// Values and sigmas of the last accepted calibration; the estimate mask
    /// comes from the user configuration and never changes.
    pub current: ParamPrior,
    pub site_counter: usize,
    pub history: Vec<SiteRecord>,
    pub done: bool,
}

impl CalibrationState {
    pub fn new(pair_id: (String, String), prior: ParamPrior, cfg: &SessionConfig) -> Self {
        let mut state = CalibrationState {
            pair_id,
            current: prior,
            site_counter: 0,
            history: Vec::new(),
            done: false,
        };
        state.done = state.stop_reached(cfg);
        state
    }

    /// True once every estimated parameter's sigma is below its stop
    /// threshold.
    fn stop_reached(&self, cfg: &SessionConfig) -> bool {
        (0..6).all(|i| {
            if !self.current.estimate_mask[i] {
                return true;
            }
            let stop = if i < 3 {
                cfg.stop_sigma_angles
            } else {
                cfg.stop_sigma_translation
            };
            self.current.sigmas[i] < stop
        })
    }
}

/// Per-site processing configuration shared by both clouds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub neighborhood: NeighborhoodConfig,
    pub filter: FilterConfig,
    pub matching: MatchConfig,
}

/// Run one calibration site: features -> filters -> ICP with the running
/// estimate as prior, then the precision-gated update.
///
/// Pipeline failures (no overlap, unsuitable scene, rank deficiency) are
/// recorded in the history and leave the running estimate unchanged; they
/// are never fatal. The only error is calling this on a finished session.
pub fn run_site(
    state: &CalibrationState,
    ref_cloud: &PointCloud,
    mov_cloud: &PointCloud,
    pipeline: &PipelineConfig,
    session_cfg: &SessionConfig,
    timestamp: f64,
) -> Result<CalibrationState> {
    if state.done {
        return Err(CalibError::SessionDone);
    }
    session_cfg.validate()?;
    let mut next = state.clone();
    let site = state.site_counter;
    next.site_counter += 1;

    let outcome: Result<AdjustmentResult> = (|| {
        let ref_f = estimate_normals_planarity(ref_cloud, &pipeline.neighborhood)?;
        let mov_f = estimate_normals_planarity(mov_cloud, &pipeline.neighborhood)?;
        let ref_f = apply_filters(&ref_f, &pipeline.filter)?;
        let mov_f = apply_filters(&mov_f, &pipeline.filter)?;
        run_icp(
            &ref_f,
            &mov_f,
            &state.current.values,
            &state.current,
            &pipeline.matching,
        )
    })();

    match outcome {
        Ok(result) => {
            let new_sigmas = result.sigmas();
            let gate_ok = result.converged
                && (0..6).all(|i| {
                    !state.current.estimate_mask[i]
                        || new_sigmas[i]
                            <= session_cfg.update_gate_factor * state.current.sigmas[i]
                });
            if gate_ok {
                next.current.values = result.params;
                for (i, &sigma) in new_sigmas.iter().enumerate() {
                    if next.current.estimate_mask[i] {
                        next.current.sigmas[i] = sigma;
                    }
                }
                next.done = next.stop_reached(session_cfg);
            }
            log::info!(
                "site {site}: {} correspondences, residual std {:.4} m, accepted={gate_ok}",
                result.num_correspondences,
                result.residual_std
            );
            next.history.push(SiteRecord {
                site,
                timestamp,
                num_correspondences: result.num_correspondences,
                residual_mean: Some(result.residual_mean),
                residual_std: Some(result.residual_std),
                params: next.current.values,
                sigmas: next.current.sigmas,
                accepted: gate_ok,
                failure: if result.converged {
                    None
                } else {
                    Some("icp did not converge".into())
                },
            });
        }
        Err(err) => {
            log::warn!("site {site} failed: {err}");
            next.history.push(SiteRecord {
                site,
                timestamp,
                num_correspondences: 0,
                residual_mean: None,
                residual_std: None,
                params: next.current.values,
                sigmas: next.current.sigmas,
                accepted: false,
                failure: Some(err.to_string()),
            });
        }
    }
    Ok(next)
}

/// Accumulated clouds of one calibration site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteClouds {
    pub reference: PointCloud,
    pub movable: PointCloud,
}

/// A replayable session: the twist stream plus the accumulated cloud pair
/// of each static site, in trigger order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub twist: Vec<TwistSample>,
    pub sites: Vec<SiteClouds>,
}

/// Per-site quality indicators of a whole session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub pair_id: (String, String),
    pub rows: Vec<SiteRecord>,
}

/// Times at which complete calibration windows close: the robot became
/// static at `t`, stayed static through `t + delay + accumulation`, and the
/// twist stream covers that instant.
pub fn calibration_windows(events: &[MotionEvent], last_timestamp: f64, cfg: &SessionConfig) -> Vec<f64> {
    let mut windows = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if let MotionEvent::BecameStatic(t) = e {
            let end = t + cfg.trigger_delay + cfg.accumulation_duration;
            let interrupted = events[i + 1..].iter().any(|later| match later {
                MotionEvent::BecameMoving(tm) => *tm <= end,
                MotionEvent::BecameStatic(_) => false,
            });
            if !interrupted && last_timestamp >= end {
                windows.push(end);
            }
        }
    }
    windows
}

/// Replay a full session: motion detection, trigger delay, accumulation
/// window, one `run_site` per complete static interval, stopping early once
/// the state is done. The k-th complete window consumes the k-th site cloud
/// pair.
pub fn run_session(
    scenario: &Scenario,
    session_cfg: &SessionConfig,
    pipeline: &PipelineConfig,
    initial_prior: ParamPrior,
) -> Result<(CalibrationState, SessionReport)> {
    let events = motion_state(&scenario.twist, session_cfg)?;
    let last_timestamp = scenario
        .twist
        .last()
        .map(|s| s.timestamp)
        .unwrap_or(f64::NEG_INFINITY);
    let windows = calibration_windows(&events, last_timestamp, session_cfg);

    let pair_id = scenario
        .sites
        .first()
        .map(|s| {
            (
                s.reference.frame_id().to_string(),
                s.movable.frame_id().to_string(),
            )
        })
        .unwrap_or_else(|| ("reference".to_string(), "movable".to_string()));
    let mut state = CalibrationState::new(pair_id.clone(), initial_prior, session_cfg);

    for (k, &window_end) in windows.iter().enumerate() {
        if state.done || k >= scenario.sites.len() {
            break;
        }
        let site = &scenario.sites[k];
        state = run_site(
            &state,
            &site.reference,
            &site.movable,
            pipeline,
            session_cfg,
            window_end,
        )?;
    }

    let report = SessionReport {
        pair_id,
        rows: state.history.clone(),
    };
    Ok((state, report))
}
