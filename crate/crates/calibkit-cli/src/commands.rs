//! The three entry points behind the CLI subcommands.
//!
//! Exit-code contract: 0 success, 1 usage/IO error, 2 calibration-quality
//! failure (a report is still written in that case).

use std::path::Path;

use anyhow::{bail, Context, Result};

use calibkit::matching::run_icp;
use calibkit::session::run_session;
use calibkit::{apply_filters, estimate_normals_planarity};

use crate::config::{load_config, ConfigEcho, ParamsDto, SigmasDto};
use crate::ply::read_ply;
use crate::report::{write_report, write_site_log, CalibrationReport, SiteRow};
use crate::scenario::{discover_sensors, load_scenario, load_scene_config, simulate_scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Exit code 0.
    Success,
    /// Exit code 2: the pipeline ran but the calibration is not usable.
    QualityFailure,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::QualityFailure => 2,
        }
    }
}

/// Calibrate one movable cloud against one reference cloud and write a
/// JSON report.
pub fn cmd_calibrate_pair(
    ref_file: &Path,
    mov_file: &Path,
    config_file: Option<&Path>,
    output_path: &Path,
) -> Result<Outcome> {
    let (_, cfg) = load_config(config_file)?;
    let echo = ConfigEcho::from_resolved(&cfg);
    let ref_cloud = read_ply(ref_file)?;
    let mov_cloud = read_ply(mov_file)?;

    let mut report = CalibrationReport::shell(ref_cloud.frame_id(), mov_cloud.frame_id(), echo);
    report.params = ParamsDto::from_params(&cfg.prior.values);
    report.param_sigmas = SigmasDto::from_sigmas(&cfg.prior.sigmas);

    let outcome = (|| -> calibkit::Result<_> {
        let ref_f = estimate_normals_planarity(&ref_cloud, &cfg.pipeline.neighborhood)?;
        let mov_f = estimate_normals_planarity(&mov_cloud, &cfg.pipeline.neighborhood)?;
        let ref_f = apply_filters(&ref_f, &cfg.pipeline.filter)?;
        let mov_f = apply_filters(&mov_f, &cfg.pipeline.filter)?;
        run_icp(
            &ref_f,
            &mov_f,
            &cfg.prior.values,
            &cfg.prior,
            &cfg.pipeline.matching,
        )
    })();

    let result_outcome = match outcome {
        Ok(result) => {
            report.status = if result.converged {
                "converged"
            } else {
                "not_converged"
            }
            .to_string();
            report.params = ParamsDto::from_params(&result.params);
            report.param_sigmas = SigmasDto::from_sigmas(&result.sigmas());
            report.set_covariance(&result.covariance);
            report.sites.push(SiteRow {
                site: 0,
                timestamp: 0.0,
                num_correspondences: result.num_correspondences,
                residual_mean: Some(result.residual_mean),
                residual_std: Some(result.residual_std),
                params: report.params,
                sigmas: report.param_sigmas,
                accepted: result.converged,
                failure: None,
            });
            if result.converged {
                Outcome::Success
            } else {
                report.failure = Some("icp did not converge".to_string());
                Outcome::QualityFailure
            }
        }
        Err(err) => {
            report.status = "failed".to_string();
            report.failure = Some(err.to_string());
            Outcome::QualityFailure
        }
    };
    write_report(output_path, &report)?;
    log::info!(
        "calibrate-pair: {} -> {} ({})",
        mov_file.display(),
        output_path.display(),
        report.status
    );
    Ok(result_outcome)
}

/// Replay a scenario directory: one independent session per movable sensor,
/// writing `report_<sensor>.json` and `log_<sensor>.csv` into `output_dir`.
pub fn cmd_run_session(
    scenario_dir: &Path,
    config_file: Option<&Path>,
    output_dir: &Path,
) -> Result<Outcome> {
    let (_, cfg) = load_config(config_file)?;
    let echo = ConfigEcho::from_resolved(&cfg);
    let sensors = discover_sensors(scenario_dir)?;
    if sensors.is_empty() {
        bail!(
            "{}: no site_<k>/<sensor>.ply clouds found",
            scenario_dir.display()
        );
    }
    let reference = cfg.reference_sensor.clone();
    if !sensors.contains(&reference) {
        bail!(
            "reference sensor '{reference}' not present in {} (found: {})",
            scenario_dir.display(),
            sensors.join(", ")
        );
    }
    let movables: Vec<String> = sensors.into_iter().filter(|s| *s != reference).collect();
    if movables.is_empty() {
        bail!("{}: only the reference sensor is present", scenario_dir.display());
    }
    std::fs::create_dir_all(output_dir)
        .with_context(|| format!("cannot create {}", output_dir.display()))?;

    let mut all_done = true;
    for movable in &movables {
        let scenario = load_scenario(scenario_dir, &reference, movable)?;
        let (state, _report) = run_session(&scenario, &cfg.session, &cfg.pipeline, cfg.prior)
            .map_err(|e| anyhow::anyhow!("session {reference}->{movable}: {e}"))?;
        let rows: Vec<SiteRow> = state.history.iter().map(SiteRow::from_record).collect();
        let report = CalibrationReport::from_state(&state, echo.clone());
        write_report(&output_dir.join(format!("report_{movable}.json")), &report)?;
        write_site_log(&output_dir.join(format!("log_{movable}.csv")), &rows)?;
        log::info!(
            "session {reference}->{movable}: {} sites, done={}",
            state.site_counter,
            state.done
        );
        all_done &= state.done;
    }
    Ok(if all_done {
        Outcome::Success
    } else {
        Outcome::QualityFailure
    })
}

/// Materialize a scenario directory from a scene configuration.
pub fn cmd_simulate(scene_config: &Path, output_dir: &Path, seed: u64) -> Result<Outcome> {
    let cfg = load_scene_config(scene_config)?;
    simulate_scenario(&cfg, seed, output_dir)?;
    log::info!(
        "simulate: {} sites written to {}",
        cfg.sites.len(),
        output_dir.display()
    );
    Ok(Outcome::Success)
}
