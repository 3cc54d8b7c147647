//! Scenario directories and scene configurations.
//!
//! A scenario directory holds one twist stream and one subdirectory per
//! calibration site:
//!
//! ```text
//! scenario/
//!   twist.csv            timestamp,linear,angular
//!   ground_truth.toml    optional, written by `simulate`
//!   site_0/<sensor>.ply  one cloud per sensor id
//!   site_1/...
//! ```
//!
//! Scene configurations (TOML) drive `simulate`: a list of sites, each a set
//! of plane patches, plus the sensor poses' ground truth, noise, and the
//! twist timing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use calibkit::session::{Scenario, SiteClouds, TwistSample};
use calibkit::synth::{generate_scene, render_view, PlaneSpec, SceneSpec};
use calibkit::{ExtrinsicParams, Vector3};

use crate::config::ParamsDto;
use crate::ply::{read_ply, write_ply, PlyFormat};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    #[serde(default = "default_ref_id")]
    pub reference_sensor: String,
    #[serde(default = "default_mov_id")]
    pub movable_sensor: String,
    pub ground_truth: ParamsDto,
    #[serde(default)]
    pub twist: TwistTiming,
    #[serde(rename = "sites")]
    pub sites: Vec<SiteSceneConfig>,
}

fn default_noise_sigma() -> f64 {
    0.005
}
fn default_max_range() -> f64 {
    60.0
}
fn default_ref_id() -> String {
    "ref".to_string()
}
fn default_mov_id() -> String {
    "mov".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistTiming {
    pub sample_rate: f64,
    pub moving_duration: f64,
    pub static_duration: f64,
    pub moving_linear_speed: f64,
}

impl Default for TwistTiming {
    fn default() -> Self {
        TwistTiming {
            sample_rate: 10.0,
            moving_duration: 3.0,
            static_duration: 6.0,
            moving_linear_speed: 0.8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSceneConfig {
    #[serde(default)]
    pub clutter_fraction: f64,
    pub seed: u64,
    pub planes: Vec<PlaneConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub extent: [f64; 2],
    pub density: f64,
}

impl SiteSceneConfig {
    pub fn to_scene_spec(&self, seed_offset: u64) -> SceneSpec {
        SceneSpec {
            planes: self
                .planes
                .iter()
                .map(|p| PlaneSpec {
                    center: Vector3::new(p.center[0], p.center[1], p.center[2]),
                    normal: Vector3::new(p.normal[0], p.normal[1], p.normal[2]),
                    extent: p.extent,
                    density: p.density,
                })
                .collect(),
            clutter_fraction: self.clutter_fraction,
            seed: self.seed ^ seed_offset,
        }
    }
}

pub fn load_scene_config(path: &Path) -> Result<SceneConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scene config {}", path.display()))?;
    let cfg: SceneConfig = toml::from_str(&text)
        .with_context(|| format!("cannot parse scene config {}", path.display()))?;
    if cfg.sites.is_empty() {
        bail!("{}: scene config has no sites", path.display());
    }
    Ok(cfg)
}

pub fn write_twist_csv(path: &Path, samples: &[TwistSample]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["timestamp", "linear", "angular"])?;
    for s in samples {
        w.write_record(&[
            s.timestamp.to_string(),
            s.linear_speed.to_string(),
            s.angular_speed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_twist_csv(path: &Path) -> Result<Vec<TwistSample>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut samples = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        if record.len() < 3 {
            bail!("{}: row {}: expected 3 columns", path.display(), i + 2);
        }
        let parse = |j: usize| -> Result<f64> {
            record[j]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}: row {}: bad number '{}'", path.display(), i + 2, &record[j]))
        };
        samples.push(TwistSample {
            timestamp: parse(0)?,
            linear_speed: parse(1)?,
            angular_speed: parse(2)?,
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GroundTruthFile {
    ground_truth: ParamsDto,
}

pub fn write_ground_truth(path: &Path, params: &ParamsDto) -> Result<()> {
    let text = toml::to_string_pretty(&GroundTruthFile {
        ground_truth: *params,
    })
    .context("serializing ground truth")?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<ParamsDto> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let file: GroundTruthFile =
        toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    Ok(file.ground_truth)
}

/// Materialize a scenario directory from a scene configuration. Every seed
/// is mixed with `cli_seed`, so a fixed `--seed` reproduces files
/// bit-identically.
pub fn simulate_scenario(cfg: &SceneConfig, cli_seed: u64, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let truth = cfg.ground_truth.to_params();
    let mut twist = Vec::new();
    let timing = &cfg.twist;
    let dt = 1.0 / timing.sample_rate;
    let samples_per_site =
        ((timing.moving_duration + timing.static_duration) * timing.sample_rate).round() as usize;
    let moving_samples = (timing.moving_duration * timing.sample_rate).round() as usize;

    for (k, site) in cfg.sites.iter().enumerate() {
        let spec = site.to_scene_spec(cli_seed);
        let world = generate_scene(&spec).map_err(|e| anyhow::anyhow!("site {k}: {e}"))?;
        let base = spec.seed;
        let mut reference = render_view(
            &world,
            &ExtrinsicParams::identity(),
            cfg.noise_sigma,
            cfg.max_range,
            base.wrapping_add(101),
        )
        .map_err(|e| anyhow::anyhow!("site {k}: {e}"))?;
        reference.set_frame_id(cfg.reference_sensor.clone());
        reference.set_acquired_at_site(Some(k));
        let mut movable = render_view(
            &world,
            &truth,
            cfg.noise_sigma,
            cfg.max_range,
            base.wrapping_add(202),
        )
        .map_err(|e| anyhow::anyhow!("site {k}: {e}"))?;
        movable.set_frame_id(cfg.movable_sensor.clone());
        movable.set_acquired_at_site(Some(k));

        let site_dir = out_dir.join(format!("site_{k}"));
        std::fs::create_dir_all(&site_dir)?;
        write_ply(
            &site_dir.join(format!("{}.ply", cfg.reference_sensor)),
            &reference,
            PlyFormat::BinaryLittleEndian,
        )?;
        write_ply(
            &site_dir.join(format!("{}.ply", cfg.movable_sensor)),
            &movable,
            PlyFormat::BinaryLittleEndian,
        )?;

        let t0 = k as f64 * (timing.moving_duration + timing.static_duration);
        for i in 0..samples_per_site {
            twist.push(TwistSample {
                timestamp: t0 + i as f64 * dt,
                linear_speed: if i < moving_samples {
                    timing.moving_linear_speed
                } else {
                    0.0
                },
                angular_speed: 0.0,
            });
        }
    }
    write_twist_csv(&out_dir.join("twist.csv"), &twist)?;
    write_ground_truth(&out_dir.join("ground_truth.toml"), &cfg.ground_truth)?;
    Ok(())
}

/// Sensor ids present in a scenario directory, sorted.
pub fn discover_sensors(dir: &Path) -> Result<Vec<String>> {
    let mut sensors = BTreeSet::new();
    for site_dir in site_dirs(dir)? {
        for entry in std::fs::read_dir(&site_dir.1)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "ply") {
                if let Some(stem) = path.file_stem() {
                    sensors.insert(stem.to_string_lossy().to_string());
                }
            }
        }
    }
    Ok(sensors.into_iter().collect())
}

/// `site_<k>` subdirectories sorted by `k`.
pub fn site_dirs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut dirs = Vec::new();
    for entry in
        std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?
    {
        let entry = entry?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(index) = name.strip_prefix("site_") {
                if let Ok(k) = index.parse::<usize>() {
                    dirs.push((k, path));
                }
            }
        }
    }
    dirs.sort_by_key(|(k, _)| *k);
    Ok(dirs)
}

/// Assemble the replayable scenario for one sensor pair.
pub fn load_scenario(dir: &Path, reference: &str, movable: &str) -> Result<Scenario> {
    let twist = read_twist_csv(&dir.join("twist.csv"))?;
    let mut sites = Vec::new();
    for (k, site_dir) in site_dirs(dir)? {
        let ref_path = site_dir.join(format!("{reference}.ply"));
        let mov_path = site_dir.join(format!("{movable}.ply"));
        if !ref_path.exists() || !mov_path.exists() {
            bail!(
                "site_{k} lacks {reference}.ply or {movable}.ply in {}",
                dir.display()
            );
        }
        let mut reference_cloud = read_ply(&ref_path)?;
        reference_cloud.set_acquired_at_site(Some(k));
        let mut movable_cloud = read_ply(&mov_path)?;
        movable_cloud.set_acquired_at_site(Some(k));
        sites.push(SiteClouds {
            reference: reference_cloud,
            movable: movable_cloud,
        });
    }
    Ok(Scenario { twist, sites })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twist_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("twist.csv");
        let samples = vec![
            TwistSample {
                timestamp: 0.0,
                linear_speed: 0.5,
                angular_speed: 0.01,
            },
            TwistSample {
                timestamp: 0.1,
                linear_speed: 0.0,
                angular_speed: 0.0,
            },
        ];
        write_twist_csv(&path, &samples).unwrap();
        assert_eq!(read_twist_csv(&path).unwrap(), samples);
    }

    #[test]
    fn ground_truth_round_trips_through_report_reader_types() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ground_truth.toml");
        let params = ParamsDto {
            angles_deg: [2.0, -1.0, 3.0],
            translation_m: [0.05, -0.03, 0.1],
        };
        write_ground_truth(&path, &params).unwrap();
        assert_eq!(read_ground_truth(&path).unwrap(), params);
    }

    #[test]
    fn bad_twist_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("twist.csv");
        std::fs::write(&path, "timestamp,linear,angular\n0.0,0.5,0.0\n0.1,huh,0.0\n").unwrap();
        let err = format!("{:#}", read_twist_csv(&path).unwrap_err());
        assert!(err.contains("row 3"), "error lacks row: {err}");
    }
}
