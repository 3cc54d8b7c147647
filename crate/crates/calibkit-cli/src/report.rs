//! Calibration reports (JSON) and per-site logs (CSV).
//!
//! Reports round-trip: writing and re-reading yields equal values. The 6x6
//! covariance is stored in library units (rad^2, rad*m, m^2 blocks, rows and
//! columns ordered alpha_x, alpha_y, alpha_z, t_x, t_y, t_z); parameter
//! values and sigmas are degrees and meters.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use calibkit::session::{CalibrationState, SiteRecord};
use calibkit::Matrix6;

use crate::config::{ConfigEcho, ParamsDto, SigmasDto};

pub const ROTATION_CONVENTION: &str =
    "intrinsic x-y-z: R = Rz(alpha_z) * Ry(alpha_y) * Rx(alpha_x), applied to column vectors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRow {
    pub site: usize,
    pub timestamp: f64,
    pub num_correspondences: usize,
    pub residual_mean: Option<f64>,
    pub residual_std: Option<f64>,
    pub params: ParamsDto,
    pub sigmas: SigmasDto,
    pub accepted: bool,
    pub failure: Option<String>,
}

impl SiteRow {
    pub fn from_record(r: &SiteRecord) -> Self {
        SiteRow {
            site: r.site,
            timestamp: r.timestamp,
            num_correspondences: r.num_correspondences,
            residual_mean: r.residual_mean,
            residual_std: r.residual_std,
            params: ParamsDto::from_params(&r.params),
            sigmas: SigmasDto::from_sigmas(&r.sigmas),
            accepted: r.accepted,
            failure: r.failure.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tool: String,
    pub version: String,
    pub rotation_convention: String,
    pub reference_sensor: String,
    pub movable_sensor: String,
    /// "converged", "not_converged", "done", "not_done", or "failed"
    pub status: String,
    pub failure: Option<String>,
    pub params: ParamsDto,
    pub param_sigmas: SigmasDto,
    /// Row-major 6x6, library units.
    pub covariance: Vec<Vec<f64>>,
    pub sites: Vec<SiteRow>,
    pub config: ConfigEcho,
}

impl CalibrationReport {
    pub fn shell(
        reference_sensor: &str,
        movable_sensor: &str,
        config: ConfigEcho,
    ) -> CalibrationReport {
        CalibrationReport {
            tool: "calibkit".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rotation_convention: ROTATION_CONVENTION.to_string(),
            reference_sensor: reference_sensor.to_string(),
            movable_sensor: movable_sensor.to_string(),
            status: "failed".to_string(),
            failure: None,
            params: ParamsDto {
                angles_deg: [0.0; 3],
                translation_m: [0.0; 3],
            },
            param_sigmas: SigmasDto {
                angles_deg: [None; 3],
                translation_m: [None; 3],
            },
            covariance: vec![vec![0.0; 6]; 6],
            sites: Vec::new(),
            config,
        }
    }

    pub fn set_covariance(&mut self, c: &Matrix6<f64>) {
        self.covariance = (0..6)
            .map(|i| (0..6).map(|j| c[(i, j)]).collect())
            .collect();
    }

    /// Session-level report. Only the per-parameter variances survive the
    /// site-to-site chaining (priors are weighted by the covariance
    /// diagonal), so the reported matrix is diagonal.
    pub fn from_state(state: &CalibrationState, config: ConfigEcho) -> CalibrationReport {
        let mut report = CalibrationReport::shell(&state.pair_id.0, &state.pair_id.1, config);
        report.status = if state.done { "done" } else { "not_done" }.to_string();
        report.params = ParamsDto::from_params(&state.current.values);
        report.param_sigmas = SigmasDto::from_sigmas(&state.current.sigmas);
        let mut diag = Matrix6::zeros();
        for i in 0..6 {
            let s = state.current.sigmas[i];
            if s.is_finite() {
                diag[(i, i)] = s * s;
            }
        }
        report.set_covariance(&diag);
        report.sites = state.history.iter().map(SiteRow::from_record).collect();
        report
    }
}

pub fn write_report(path: &Path, report: &CalibrationReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).context("serializing report")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<CalibrationReport> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Per-site CSV log. Columns: site, timestamp, n_correspondences,
/// residual_mean, residual_std, the six parameter values (degrees, meters),
/// the six sigmas, and the accepted flag. Unknown values are empty cells.
pub fn write_site_log(path: &Path, rows: &[SiteRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record([
        "site",
        "timestamp",
        "n_correspondences",
        "residual_mean",
        "residual_std",
        "alpha_x_deg",
        "alpha_y_deg",
        "alpha_z_deg",
        "t_x",
        "t_y",
        "t_z",
        "sigma_alpha_x_deg",
        "sigma_alpha_y_deg",
        "sigma_alpha_z_deg",
        "sigma_t_x",
        "sigma_t_y",
        "sigma_t_z",
        "accepted",
    ])?;
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut record: Vec<String> = vec![
            r.site.to_string(),
            r.timestamp.to_string(),
            r.num_correspondences.to_string(),
            fmt_opt(r.residual_mean),
            fmt_opt(r.residual_std),
        ];
        for v in r.params.angles_deg {
            record.push(v.to_string());
        }
        for v in r.params.translation_m {
            record.push(v.to_string());
        }
        for v in r.sigmas.angles_deg {
            record.push(fmt_opt(v));
        }
        for v in r.sigmas.translation_m {
            record.push(fmt_opt(v));
        }
        record.push(r.accepted.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
