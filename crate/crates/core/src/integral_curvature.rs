//! Integral-invariant curvature of the midcurve.
//!
//! A probe disk is centred on the curve and split by it into two parts.
//! The curvature score at that point is the ratio of the larger part to the
//! smaller one: exactly 1 on a straight line, growing as the curve bends.
//!
//! Areas use a midpoint rule over rows, anchored at the disk centre, with the
//! split of each chord computed exactly: along a scanline the curve is a single
//! point, so the part of the chord left of it is a closed-form length.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};
use crate::mask_io::{Channel, ScanGrid, SoftMask};
use crate::midcurve::{MidCurve, Point};

pub const DEFAULT_RADIUS: f64 = 20.0;
pub const DEFAULT_GRID_STEP: f64 = 0.25;
pub const DEFAULT_MEDIAN_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskSplit {
    pub center: Point,
    pub radius: f64,
    /// Part of the disk left of the curve (smaller column).
    pub area_a: f64,
    /// Part of the disk right of the curve.
    pub area_b: f64,
}

pub fn split_disk(curve: &MidCurve, center_row: f64, radius: f64, grid_step: f64) -> Result<DiskSplit> {
    if !(radius > 0.0) || !(grid_step > 0.0) {
        return Err(SpineError::InvalidParameter(format!(
            "radius and grid step must be positive, got {radius}, {grid_step}"
        )));
    }
    if center_row - radius < curve.row_start() as f64 || center_row + radius > curve.row_end() as f64 {
        return Err(SpineError::InsufficientSupport { center_row, radius });
    }
    let center_col = curve.eval_at(center_row)?;
    let cells = (radius / grid_step).ceil() as usize;
    let h = radius / cells as f64;
    let r2 = radius * radius;
    let (mut area_a, mut area_b) = (0.0, 0.0);
    for i in 0..2 * cells {
        let dy = (i as f64 + 0.5) * h - radius;
        let half = (r2 - dy * dy).max(0.0).sqrt();
        let x = curve.eval_at(center_row + dy)? - center_col;
        let left = (x + half).clamp(0.0, 2.0 * half);
        area_a += h * left;
        area_b += h * (2.0 * half - left);
    }
    Ok(DiskSplit {
        center: Point::new(center_row, center_col),
        radius,
        area_a,
        area_b,
    })
}

/// `max(area) / min(area)`, always at least 1.
pub fn kappa_at(split: &DiskSplit) -> Result<f64> {
    let lo = split.area_a.min(split.area_b);
    let hi = split.area_a.max(split.area_b);
    if !(lo > 0.0) {
        return Err(SpineError::DegenerateSplit);
    }
    Ok(hi / lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaEntry {
    pub row: i64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub probe_radius: f64,
    pub grid_step: f64,
    pub smooth_window: usize,
    pub entries: Vec<KappaEntry>,
    /// Inclusive row range where the probe fits inside the curve.
    pub valid_row_range: (i64, i64),
}

impl CurvatureProfile {
    pub fn kappa_at_row(&self, row: i64) -> Option<f64> {
        let i = row.checked_sub(self.valid_row_range.0)?;
        usize::try_from(i)
            .ok()
            .and_then(|i| self.entries.get(i))
            .map(|e| e.kappa)
    }

    /// Entry with the largest κ; the first one wins ties.
    pub fn peak(&self) -> Option<KappaEntry> {
        self.entries
            .iter()
            .copied()
            .reduce(|best, e| if e.kappa > best.kappa { e } else { best })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,kappa\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{}", e.row, e.kappa);
        }
        out
    }
}

/// κ at every integer row whose probe disk fits in the curve, followed by a
/// running median over `smooth_window` rows (odd; 1 disables it).
pub fn curvature_profile(
    curve: &MidCurve,
    radius: f64,
    grid_step: f64,
    smooth_window: usize,
) -> Result<CurvatureProfile> {
    if smooth_window == 0 || smooth_window.is_multiple_of(2) {
        return Err(SpineError::InvalidParameter(format!(
            "median window must be odd, got {smooth_window}"
        )));
    }
    let first = (curve.row_start() as f64 + radius).ceil() as i64;
    let last = (curve.row_end() as f64 - radius).floor() as i64;
    if !(radius > 0.0) || first > last {
        return Err(SpineError::CurveTooShort {
            rows: curve.len(),
            radius,
        });
    }
    let raw: Vec<f64> = (first..=last)
        .map(|row| split_disk(curve, row as f64, radius, grid_step).and_then(|s| kappa_at(&s)))
        .collect::<Result<_>>()?;
    let smoothed = running_median(&raw, smooth_window);
    Ok(CurvatureProfile {
        probe_radius: radius,
        grid_step,
        smooth_window,
        entries: (first..=last)
            .zip(smoothed)
            .map(|(row, kappa)| KappaEntry { row, kappa })
            .collect(),
        valid_row_range: (first, last),
    })
}

/// Centred median; near the ends the window shrinks symmetrically.
fn running_median(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend_from_slice(&values[i - k..=i + k]);
            buf.sort_by(f64::total_cmp);
            buf[k]
        })
        .collect()
}

pub fn max_curvature_score(profile: &CurvatureProfile) -> Result<f64> {
    profile.peak().map(|e| e.kappa).ok_or(SpineError::EmptyProfile)
}

/// How κ is mapped onto 0..=255.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HeatmapScale {
    /// `(κ − 1) / (κ_max − 1)`, per scan.
    #[default]
    Relative,
    /// `(κ − lo) / (hi − lo)`, fixed across scans.
    Absolute { lo: f64, hi: f64 },
}

/// Paint each spine-supported pixel of a scanline with that row's κ.
pub fn heatmap_values(
    profile: &CurvatureProfile,
    mask: &SoftMask,
    spine_channel: Channel,
    support_threshold: f64,
    scale: HeatmapScale,
) -> ScanGrid {
    let mut out = ScanGrid::zeros(mask.rows(), mask.cols());
    let (lo, hi) = match scale {
        HeatmapScale::Relative => (1.0, profile.peak().map_or(1.0, |e| e.kappa)),
        HeatmapScale::Absolute { lo, hi } => (lo, hi),
    };
    if !(hi > lo) {
        return out;
    }
    for e in &profile.entries {
        let Ok(row) = usize::try_from(e.row) else {
            continue;
        };
        if row >= mask.rows() {
            continue;
        }
        let value = ((e.kappa - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0).round();
        for (col, &p) in mask.channel_row(spine_channel, row).iter().enumerate() {
            if f64::from(p) >= support_threshold {
                out.set(row, col, value);
            }
        }
    }
    out
}

/// Black → red → yellow → white.
pub fn heat_color(value: f64) -> [u8; 3] {
    let t = (value / 255.0).clamp(0.0, 1.0);
    let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)]
}

/// Overlay a heatmap on a grey background (normalized to its own maximum).
pub fn composite_heatmap(heat: &ScanGrid, background: &ScanGrid) -> Result<Vec<[u8; 3]>> {
    if (heat.rows(), heat.cols()) != (background.rows(), background.cols()) {
        return Err(SpineError::Structure(format!(
            "heatmap is {}x{} but background is {}x{}",
            heat.rows(),
            heat.cols(),
            background.rows(),
            background.cols()
        )));
    }
    const ALPHA: f64 = 0.7;
    let peak = background.max_value();
    Ok(heat
        .values()
        .iter()
        .zip(background.values())
        .map(|(&h, &b)| {
            let grey = if peak > 0.0 { b / peak * 255.0 } else { 0.0 };
            if h <= 0.0 {
                let g = grey.round() as u8;
                return [g, g, g];
            }
            let c = heat_color(h);
            c.map(|v| ((1.0 - ALPHA) * grey + ALPHA * f64::from(v)).round() as u8)
        })
        .collect())
}
