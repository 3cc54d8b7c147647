//! TOML configuration with sections `[features]`, `[filter]`, `[match]`,
//! `[session]`, `[prior]`. Angles are degrees at this boundary (`_deg`
//! suffix) and radians inside the library. A prior sigma of `inf` marks the
//! component as unconstrained.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use calibkit::{
    ExtrinsicParams, FilterConfig, MatchConfig, NeighborhoodConfig, ParamPrior, PipelineConfig,
    SessionConfig,
};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub features: RawFeatures,
    #[serde(default)]
    pub filter: RawFilter,
    #[serde(default, rename = "match")]
    pub matching: RawMatch,
    #[serde(default)]
    pub session: RawSession,
    #[serde(default)]
    pub prior: RawPrior,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFeatures {
    pub k_neighbors: Option<usize>,
    pub max_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFilter {
    pub min_range: Option<f64>,
    pub max_range: Option<f64>,
    pub min_intensity: Option<f64>,
    pub voxel_size: Option<f64>,
    /// Set to a negative value to disable the planarity stage.
    pub min_planarity: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMatch {
    pub num_selected: Option<usize>,
    pub max_distance_factor: Option<f64>,
    pub max_normal_angle_deg: Option<f64>,
    pub max_iterations: Option<usize>,
    pub convergence_delta_angle_deg: Option<f64>,
    pub convergence_delta_translation: Option<f64>,
    pub min_correspondences: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSession {
    pub reference_sensor: Option<String>,
    pub static_linear_threshold: Option<f64>,
    pub static_angular_threshold_deg: Option<f64>,
    pub trigger_delay: Option<f64>,
    pub accumulation_duration: Option<f64>,
    pub stop_sigma_angles_deg: Option<f64>,
    pub stop_sigma_translation: Option<f64>,
    pub update_gate_factor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPrior {
    pub angles_deg: Option<[f64; 3]>,
    pub translation: Option<[f64; 3]>,
    /// `inf` (the TOML literal) marks a component as unconstrained.
    pub sigma_angles_deg: Option<[f64; 3]>,
    pub sigma_translation: Option<[f64; 3]>,
    /// `[alpha_x, alpha_y, alpha_z, t_x, t_y, t_z]`; false holds the
    /// component fixed at its prior value.
    pub estimate: Option<[bool; 6]>,
}

/// Everything a command needs, resolved to library units.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub pipeline: PipelineConfig,
    pub session: SessionConfig,
    pub prior: ParamPrior,
    pub reference_sensor: String,
}

impl RawConfig {
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let nd = NeighborhoodConfig::default();
        let neighborhood = NeighborhoodConfig {
            k_neighbors: self.features.k_neighbors.unwrap_or(nd.k_neighbors),
            max_radius: self.features.max_radius.or(nd.max_radius),
        };

        let fd = FilterConfig::default();
        let filter = FilterConfig {
            min_range: self.filter.min_range.unwrap_or(fd.min_range),
            max_range: self.filter.max_range.unwrap_or(fd.max_range),
            min_intensity: self.filter.min_intensity,
            voxel_size: self.filter.voxel_size.unwrap_or(fd.voxel_size),
            min_planarity: match self.filter.min_planarity {
                Some(v) if v < 0.0 => None,
                Some(v) => Some(v),
                None => fd.min_planarity,
            },
        };

        let md = MatchConfig::default();
        let matching = MatchConfig {
            num_selected: self.matching.num_selected.unwrap_or(md.num_selected),
            max_distance_factor: self
                .matching
                .max_distance_factor
                .unwrap_or(md.max_distance_factor),
            max_normal_angle: self
                .matching
                .max_normal_angle_deg
                .map(f64::to_radians)
                .unwrap_or(md.max_normal_angle),
            max_iterations: self.matching.max_iterations.unwrap_or(md.max_iterations),
            convergence_delta_angle: self
                .matching
                .convergence_delta_angle_deg
                .map(f64::to_radians)
                .unwrap_or(md.convergence_delta_angle),
            convergence_delta_translation: self
                .matching
                .convergence_delta_translation
                .unwrap_or(md.convergence_delta_translation),
            min_correspondences: self
                .matching
                .min_correspondences
                .unwrap_or(md.min_correspondences),
        };

        let sd = SessionConfig::default();
        let session = SessionConfig {
            static_linear_threshold: self
                .session
                .static_linear_threshold
                .unwrap_or(sd.static_linear_threshold),
            static_angular_threshold: self
                .session
                .static_angular_threshold_deg
                .map(f64::to_radians)
                .unwrap_or(sd.static_angular_threshold),
            trigger_delay: self.session.trigger_delay.unwrap_or(sd.trigger_delay),
            accumulation_duration: self
                .session
                .accumulation_duration
                .unwrap_or(sd.accumulation_duration),
            stop_sigma_angles: self
                .session
                .stop_sigma_angles_deg
                .map(f64::to_radians)
                .unwrap_or(sd.stop_sigma_angles),
            stop_sigma_translation: self
                .session
                .stop_sigma_translation
                .unwrap_or(sd.stop_sigma_translation),
            update_gate_factor: self
                .session
                .update_gate_factor
                .unwrap_or(sd.update_gate_factor),
        };

        let angles_deg = self.prior.angles_deg.unwrap_or([0.0; 3]);
        let translation = self.prior.translation.unwrap_or([0.0; 3]);
        let values = ExtrinsicParams::new(
            angles_deg[0].to_radians(),
            angles_deg[1].to_radians(),
            angles_deg[2].to_radians(),
            translation[0],
            translation[1],
            translation[2],
        );
        let sigma_angles = self.prior.sigma_angles_deg.unwrap_or([f64::INFINITY; 3]);
        let sigma_translation = self.prior.sigma_translation.unwrap_or([f64::INFINITY; 3]);
        let sigmas = [
            sigma_angles[0].to_radians(),
            sigma_angles[1].to_radians(),
            sigma_angles[2].to_radians(),
            sigma_translation[0],
            sigma_translation[1],
            sigma_translation[2],
        ];
        let estimate_mask = self.prior.estimate.unwrap_or([true; 6]);
        let prior = ParamPrior::new(values, sigmas, estimate_mask)
            .map_err(|e| anyhow::anyhow!("invalid [prior]: {e}"))?;

        Ok(ResolvedConfig {
            pipeline: PipelineConfig {
                neighborhood,
                filter,
                matching,
            },
            session,
            prior,
            reference_sensor: self
                .session
                .reference_sensor
                .clone()
                .unwrap_or_else(|| "ref".to_string()),
        })
    }
}

pub fn load_config(path: Option<&Path>) -> Result<(RawConfig, ResolvedConfig)> {
    let raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("cannot parse config {}", p.display()))?
        }
        None => RawConfig::default(),
    };
    let resolved = raw.resolve()?;
    Ok((raw, resolved))
}

/// Parameters in report units: degrees and meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsDto {
    pub angles_deg: [f64; 3],
    pub translation_m: [f64; 3],
}

impl ParamsDto {
    pub fn from_params(p: &ExtrinsicParams) -> Self {
        ParamsDto {
            angles_deg: [
                p.alpha_x.to_degrees(),
                p.alpha_y.to_degrees(),
                p.alpha_z.to_degrees(),
            ],
            translation_m: [p.t_x, p.t_y, p.t_z],
        }
    }

    pub fn to_params(self) -> ExtrinsicParams {
        ExtrinsicParams::new(
            self.angles_deg[0].to_radians(),
            self.angles_deg[1].to_radians(),
            self.angles_deg[2].to_radians(),
            self.translation_m[0],
            self.translation_m[1],
            self.translation_m[2],
        )
    }
}

/// Per-parameter standard deviations in report units; `None` is
/// unconstrained/unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmasDto {
    pub angles_deg: [Option<f64>; 3],
    pub translation_m: [Option<f64>; 3],
}

impl SigmasDto {
    pub fn from_sigmas(sigmas: &[f64; 6]) -> Self {
        let opt = |v: f64, deg: bool| {
            if v.is_finite() {
                Some(if deg { v.to_degrees() } else { v })
            } else {
                None
            }
        };
        SigmasDto {
            angles_deg: [
                opt(sigmas[0], true),
                opt(sigmas[1], true),
                opt(sigmas[2], true),
            ],
            translation_m: [
                opt(sigmas[3], false),
                opt(sigmas[4], false),
                opt(sigmas[5], false),
            ],
        }
    }

    pub fn to_sigmas(self) -> [f64; 6] {
        let val = |v: Option<f64>, deg: bool| match v {
            Some(x) if deg => x.to_radians(),
            Some(x) => x,
            None => f64::INFINITY,
        };
        [
            val(self.angles_deg[0], true),
            val(self.angles_deg[1], true),
            val(self.angles_deg[2], true),
            val(self.translation_m[0], false),
            val(self.translation_m[1], false),
            val(self.translation_m[2], false),
        ]
    }
}

/// Resolved configuration echoed into reports, in boundary units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k_neighbors: usize,
    pub max_radius: Option<f64>,
    pub min_range: f64,
    pub max_range: f64,
    pub min_intensity: Option<f64>,
    pub voxel_size: f64,
    pub min_planarity: Option<f64>,
    pub num_selected: usize,
    pub max_distance_factor: f64,
    pub max_normal_angle_deg: f64,
    pub max_iterations: usize,
    pub convergence_delta_angle_deg: f64,
    pub convergence_delta_translation: f64,
    pub min_correspondences: usize,
    pub static_linear_threshold: f64,
    pub static_angular_threshold_deg: f64,
    pub trigger_delay: f64,
    pub accumulation_duration: f64,
    pub stop_sigma_angles_deg: f64,
    pub stop_sigma_translation: f64,
    pub update_gate_factor: f64,
    pub prior_values: ParamsDto,
    pub prior_sigmas: SigmasDto,
    pub estimate_mask: [bool; 6],
}

impl ConfigEcho {
    pub fn from_resolved(cfg: &ResolvedConfig) -> Self {
        ConfigEcho {
            k_neighbors: cfg.pipeline.neighborhood.k_neighbors,
            max_radius: cfg.pipeline.neighborhood.max_radius,
            min_range: cfg.pipeline.filter.min_range,
            max_range: cfg.pipeline.filter.max_range,
            min_intensity: cfg.pipeline.filter.min_intensity,
            voxel_size: cfg.pipeline.filter.voxel_size,
            min_planarity: cfg.pipeline.filter.min_planarity,
            num_selected: cfg.pipeline.matching.num_selected,
            max_distance_factor: cfg.pipeline.matching.max_distance_factor,
            max_normal_angle_deg: cfg.pipeline.matching.max_normal_angle.to_degrees(),
            max_iterations: cfg.pipeline.matching.max_iterations,
            convergence_delta_angle_deg: cfg
                .pipeline
                .matching
                .convergence_delta_angle
                .to_degrees(),
            convergence_delta_translation: cfg.pipeline.matching.convergence_delta_translation,
            min_correspondences: cfg.pipeline.matching.min_correspondences,
            static_linear_threshold: cfg.session.static_linear_threshold,
            static_angular_threshold_deg: cfg.session.static_angular_threshold.to_degrees(),
            trigger_delay: cfg.session.trigger_delay,
            accumulation_duration: cfg.session.accumulation_duration,
            stop_sigma_angles_deg: cfg.session.stop_sigma_angles.to_degrees(),
            stop_sigma_translation: cfg.session.stop_sigma_translation,
            update_gate_factor: cfg.session.update_gate_factor,
            prior_values: ParamsDto::from_params(&cfg.prior.values),
            prior_sigmas: SigmasDto::from_sigmas(&cfg.prior.sigmas),
            estimate_mask: cfg.prior.estimate_mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let raw: RawConfig = toml::from_str("").unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!(cfg.pipeline.matching, MatchConfig::default());
        assert_eq!(cfg.session, SessionConfig::default());
        assert_eq!(cfg.reference_sensor, "ref");
        assert!(cfg.prior.sigmas.iter().all(|s| s.is_infinite()));
    }

    #[test]
    fn degrees_convert_at_the_boundary() {
        let raw: RawConfig = toml::from_str(
            r#"
[match]
max_normal_angle_deg = 45.0

[prior]
angles_deg = [90.0, 0.0, -90.0]
sigma_angles_deg = [1.0, inf, 2.0]
sigma_translation = [0.05, inf, 0.05]
estimate = [true, true, true, true, true, false]
"#,
        )
        .unwrap();
        let cfg = raw.resolve().unwrap();
        assert!((cfg.pipeline.matching.max_normal_angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((cfg.prior.values.alpha_x - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((cfg.prior.sigmas[0] - 1.0_f64.to_radians()).abs() < 1e-15);
        assert!(cfg.prior.sigmas[1].is_infinite());
        assert!(cfg.prior.sigmas[4].is_infinite());
        assert!(!cfg.prior.estimate_mask[5]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<RawConfig>("[match]\ntypo_field = 1\n");
        assert!(err.is_err());
    }

    /// The annotated example config spells out the built-in defaults; keep
    /// it from drifting.
    #[test]
    fn shipped_default_config_matches_defaults() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs/default.toml");
        let (_, from_file) = load_config(Some(&path)).unwrap();
        let from_defaults = RawConfig::default().resolve().unwrap();
        assert_eq!(from_file.pipeline, from_defaults.pipeline);
        assert_eq!(from_file.session, from_defaults.session);
        assert_eq!(from_file.prior, from_defaults.prior);
        assert_eq!(from_file.reference_sensor, from_defaults.reference_sensor);
    }

    #[test]
    fn params_dto_round_trip() {
        let p = ExtrinsicParams::new(0.03, -0.01, 0.05, 1.0, -2.0, 0.5);
        let dto = ParamsDto::from_params(&p);
        let back = dto.to_params();
        for (a, b) in p.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmas_dto_keeps_unconstrained() {
        let sigmas = [0.01, f64::INFINITY, 0.02, 0.1, f64::INFINITY, 0.3];
        let dto = SigmasDto::from_sigmas(&sigmas);
        assert!(dto.angles_deg[1].is_none());
        assert!(dto.translation_m[1].is_none());
        let back = dto.to_sigmas();
        assert!(back[1].is_infinite());
        assert!((back[0] - 0.01).abs() < 1e-15);
    }
}
