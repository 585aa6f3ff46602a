//! Mask in, report out: midcurve extraction, DSM angles and the curvature
//! profile with one set of parameters.

use serde::{Deserialize, Serialize};

use crate::dsm_angle::{analyze_dsm, GeometryReport, DEFAULT_MIN_DEVIATION};
use crate::error::{Result, SpineError};
use crate::integral_curvature::{
    curvature_profile, max_curvature_score, CurvatureProfile, DEFAULT_GRID_STEP, DEFAULT_MEDIAN_WINDOW, DEFAULT_RADIUS,
};
use crate::mask_io::{Channel, SoftMask};
use crate::midcurve::{
    build_baseline, extract_midcurve, BaselineSegment, MidCurve, Refinement, DEFAULT_PERCENTILES,
    DEFAULT_SUPPORT_THRESHOLD,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Moving-average window applied to the extracted midcurve before any
/// geometry. κ reacts to sub-pixel wobble of the probe centre, so the raw
/// per-row argmax is too noisy for it.
pub const DEFAULT_MIDCURVE_SMOOTHING: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub support_threshold: f64,
    pub refinement: Refinement,
    /// Odd; 1 leaves the midcurve as extracted.
    pub midcurve_smoothing: usize,
    pub percentiles: (f64, f64),
    pub min_deviation: f64,
    pub probe_radius: f64,
    pub grid_step: f64,
    pub median_window: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
            refinement: Refinement::Parabolic,
            midcurve_smoothing: DEFAULT_MIDCURVE_SMOOTHING,
            percentiles: DEFAULT_PERCENTILES,
            min_deviation: DEFAULT_MIN_DEVIATION,
            probe_radius: DEFAULT_RADIUS,
            grid_step: DEFAULT_GRID_STEP,
            median_window: DEFAULT_MEDIAN_WINDOW,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.percentiles;
        let problem = if !(0.0..=1.0).contains(&self.support_threshold) {
            Some("support threshold must lie in [0, 1]")
        } else if self.midcurve_smoothing.is_multiple_of(2) {
            Some("midcurve smoothing window must be odd")
        } else if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            Some("percentiles must satisfy 0 <= lo < hi <= 100")
        } else if !(self.min_deviation >= 0.0) {
            Some("min deviation must be >= 0")
        } else if !(self.probe_radius > 0.0) || !(self.grid_step > 0.0) {
            Some("probe radius and grid step must be positive")
        } else if self.median_window.is_multiple_of(2) {
            Some("median window must be odd")
        } else {
            None
        };
        match problem {
            Some(p) => Err(SpineError::InvalidParameter(p.into())),
            None => Ok(()),
        }
    }
}

/// Everything computed for one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// The midcurve after smoothing; every later stage uses it.
    pub curve: MidCurve,
    pub baseline: BaselineSegment,
    pub geometry: GeometryReport,
    pub profile: CurvatureProfile,
}

pub fn analyze_mask(mask: &SoftMask, config: &AnalysisConfig) -> Result<Analysis> {
    config.validate()?;
    let extraction = extract_midcurve(mask, Channel::Spine, config.support_threshold, config.refinement)?;
    let curve = extraction.curve.smoothed(config.midcurve_smoothing)?;
    let (lo, hi) = config.percentiles;
    let baseline = build_baseline(&curve, lo, hi)?;
    let mut geometry = analyze_dsm(&curve, &baseline, config.min_deviation)?;
    let mut warnings = extraction.warnings;
    warnings.append(&mut geometry.quality_warnings);
    geometry.quality_warnings = warnings;
    let profile = curvature_profile(&curve, config.probe_radius, config.grid_step, config.median_window)?;
    geometry.max_curvature = Some(max_curvature_score(&profile)?);
    Ok(Analysis {
        curve,
        baseline,
        geometry,
        profile,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSummary {
    pub max_curvature: f64,
    pub peak_row: i64,
    pub mean_kappa: f64,
    pub probe_radius: f64,
    pub grid_step: f64,
    pub valid_row_range: (i64, i64),
}

/// The JSON document written per analysed scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub scan_id: String,
    pub midcurve_rows: (i64, i64),
    pub geometry: GeometryReport,
    pub curvature: CurvatureSummary,
    pub config: AnalysisConfig,
}

impl Analysis {
    pub fn report(&self, scan_id: &str, config: &AnalysisConfig) -> ScanReport {
        let peak = self.profile.peak().expect("profile is non-empty after analysis");
        let n = self.profile.entries.len() as f64;
        ScanReport {
            schema_version: REPORT_SCHEMA_VERSION,
            scan_id: scan_id.to_string(),
            midcurve_rows: (self.curve.row_start(), self.curve.row_end()),
            geometry: self.geometry.clone(),
            curvature: CurvatureSummary {
                max_curvature: peak.kappa,
                peak_row: peak.row,
                mean_kappa: self.profile.entries.iter().map(|e| e.kappa).sum::<f64>() / n,
                probe_radius: self.profile.probe_radius,
                grid_step: self.profile.grid_step,
                valid_row_range: self.profile.valid_row_range,
            },
            config: *config,
        }
    }
}
