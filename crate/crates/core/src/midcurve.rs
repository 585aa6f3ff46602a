//! Spine midcurve extraction and the normal spine line.
//!
//! A [`MidCurve`] is a graph over scanlines: one sub-pixel column for every
//! row in a contiguous block. The normal spine line ([`BaselineSegment`])
//! joins the curve points at two row percentiles and is the reference the
//! DSM angle is measured against.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};
use crate::mask_io::{Channel, SoftMask};

pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_PERCENTILES: (f64, f64) = (3.0, 97.0);

/// Widest argmax plateau accepted without a quality warning.
pub const MAX_QUIET_TIE_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    pub fn new(row: f64, col: f64) -> Self {
        Point { row, col }
    }
}

/// Non-fatal observations attached to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityWarning {
    /// More than [`MAX_QUIET_TIE_WIDTH`] columns share the row maximum.
    WideArgmaxTie { row: i64, width: usize },
    /// Support split into several row blocks; only the largest was kept.
    FragmentedSupport {
        blocks: usize,
        kept_start: i64,
        kept_end: i64,
    },
    /// Two rows tie for the furthest point from the baseline.
    ApexTie { row: i64, other_row: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    Argmax,
    #[default]
    Parabolic,
    SoftArgmax,
}

impl FromStr for Refinement {
    type Err = SpineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Refinement::Argmax),
            "parabolic" => Ok(Refinement::Parabolic),
            "soft_argmax" | "soft-argmax" => Ok(Refinement::SoftArgmax),
            other => Err(SpineError::InvalidParameter(format!("unknown refinement `{other}`"))),
        }
    }
}

/// Scanline-indexed polyline: `cols[i]` is the column at row `row_start + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MidCurve {
    row_start: i64,
    cols: Vec<f64>,
}

impl MidCurve {
    pub fn new(row_start: i64, cols: Vec<f64>) -> Result<Self> {
        if cols.is_empty() {
            return Err(SpineError::InvalidParameter(
                "midcurve needs at least one sample".into(),
            ));
        }
        if let Some(i) = cols.iter().position(|c| !c.is_finite()) {
            return Err(SpineError::OutOfRange(format!(
                "non-finite column at row {}",
                row_start + i as i64
            )));
        }
        Ok(MidCurve { row_start, cols })
    }

    pub fn row_start(&self) -> i64 {
        self.row_start
    }

    pub fn row_end(&self) -> i64 {
        self.row_start + self.cols.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn cols(&self) -> &[f64] {
        &self.cols
    }

    /// Column at an integer row, if supported.
    pub fn col_at_row(&self, row: i64) -> Option<f64> {
        let i = row.checked_sub(self.row_start)?;
        usize::try_from(i).ok().and_then(|i| self.cols.get(i).copied())
    }

    pub fn samples(&self) -> impl Iterator<Item = Point> + '_ {
        self.cols
            .iter()
            .enumerate()
            .map(move |(i, &c)| Point::new((self.row_start + i as i64) as f64, c))
    }

    /// Linear interpolation between scanline samples; exact at integer rows.
    pub fn eval_at(&self, row: f64) -> Result<f64> {
        let t = row - self.row_start as f64;
        let last = (self.cols.len() - 1) as f64;
        if !(0.0..=last).contains(&t) {
            return Err(SpineError::Domain(format!(
                "row {row} outside supported range [{}, {}]",
                self.row_start,
                self.row_end()
            )));
        }
        let i = t.floor() as usize;
        let frac = t - i as f64;
        if frac == 0.0 {
            return Ok(self.cols[i]);
        }
        let (a, b) = (self.cols[i], self.cols[i + 1]);
        Ok(a + (b - a) * frac)
    }

    pub fn translated(&self, d_row: i64, d_col: f64) -> MidCurve {
        MidCurve {
            row_start: self.row_start + d_row,
            cols: self.cols.iter().map(|c| c + d_col).collect(),
        }
    }

    /// Mirror about the vertical axis of an image `width` columns wide.
    pub fn mirrored(&self, width: usize) -> MidCurve {
        let axis = width as f64 - 1.0;
        MidCurve {
            row_start: self.row_start,
            cols: self.cols.iter().map(|c| axis - c).collect(),
        }
    }

    /// Centered moving average over `window` rows (odd). Near the ends the
    /// window shrinks symmetrically, so endpoints and straight lines are kept.
    pub fn smoothed(&self, window: usize) -> Result<MidCurve> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(SpineError::InvalidParameter(format!(
                "smoothing window must be odd, got {window}"
            )));
        }
        let half = window / 2;
        let n = self.cols.len();
        let cols = (0..n)
            .map(|i| {
                let k = half.min(i).min(n - 1 - i);
                if k == 0 {
                    self.cols[i]
                } else {
                    self.cols[i - k..=i + k].iter().sum::<f64>() / (2 * k + 1) as f64
                }
            })
            .collect();
        Ok(MidCurve {
            row_start: self.row_start,
            cols,
        })
    }

    /// `row,col` lines with six decimals, preceded by a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col\n");
        for p in self.samples() {
            let _ = writeln!(out, "{},{:.6}", p.row as i64, p.col);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<MidCurve> {
        let mut row_start = None;
        let mut cols = Vec::new();
        let mut offset = 0;
        for line in text.split('\n') {
            let at = offset;
            offset += line.len() + 1;
            let line = line.trim();
            if line.is_empty() || line == "row,col" {
                continue;
            }
            let (r, c) = line
                .split_once(',')
                .ok_or_else(|| SpineError::parse(at, "expected `row,col`"))?;
            let r: i64 = r.parse().map_err(|_| SpineError::parse(at, "bad row"))?;
            let c: f64 = c.parse().map_err(|_| SpineError::parse(at, "bad column"))?;
            let start = *row_start.get_or_insert(r);
            if r != start + cols.len() as i64 {
                return Err(SpineError::Structure(format!(
                    "rows must increase by 1; found {r} after {}",
                    start + cols.len() as i64 - 1
                )));
            }
            cols.push(c);
        }
        MidCurve::new(row_start.unwrap_or(0), cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidcurveExtraction {
    pub curve: MidCurve,
    pub warnings: Vec<QualityWarning>,
}

/// Per-row midpoint of `channel`, for every row whose maximum reaches
/// `support_threshold`. Only the largest contiguous block of such rows is kept.
pub fn extract_midcurve(
    mask: &SoftMask,
    channel: Channel,
    support_threshold: f64,
    refine: Refinement,
) -> Result<MidcurveExtraction> {
    if !(0.0..1.0).contains(&support_threshold) {
        return Err(SpineError::InvalidParameter(format!(
            "support threshold must be in [0, 1), got {support_threshold}"
        )));
    }
    let supported: Vec<bool> = (0..mask.rows())
        .map(|r| {
            let max = mask
                .channel_row(channel, r)
                .iter()
                .fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            f64::from(max) >= support_threshold
        })
        .collect();

    // contiguous blocks of supported rows; ties keep the topmost
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut r = 0;
    while r < supported.len() {
        if supported[r] {
            let start = r;
            while r < supported.len() && supported[r] {
                r += 1;
            }
            blocks.push((start, r));
        } else {
            r += 1;
        }
    }
    let &(start, end) = blocks
        .iter()
        .reduce(|best, b| if b.1 - b.0 > best.1 - best.0 { b } else { best })
        .ok_or(SpineError::NoSpineSupport)?;

    let mut warnings = Vec::new();
    if blocks.len() > 1 {
        warnings.push(QualityWarning::FragmentedSupport {
            blocks: blocks.len(),
            kept_start: start as i64,
            kept_end: end as i64 - 1,
        });
    }
    let cols = (start..end)
        .map(|row| {
            let values = mask.channel_row(channel, row);
            let (col, tie_width) = refine_row(values, refine);
            if tie_width > MAX_QUIET_TIE_WIDTH {
                warnings.push(QualityWarning::WideArgmaxTie {
                    row: row as i64,
                    width: tie_width,
                });
            }
            col
        })
        .collect();
    Ok(MidcurveExtraction {
        curve: MidCurve::new(start as i64, cols)?,
        warnings,
    })
}

/// Returns the refined column and the number of columns tied at the maximum.
fn refine_row(values: &[f32], refine: Refinement) -> (f64, usize) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let peak = values[best];
    let ties = values.iter().filter(|&&v| v == peak).count();
    let col = match refine {
        Refinement::Argmax => best as f64,
        Refinement::Parabolic => best as f64 + parabolic_offset(values, best),
        Refinement::SoftArgmax => {
            let (num, den) = values.iter().enumerate().fold((0.0, 0.0), |(n, d), (i, &v)| {
                (n + i as f64 * f64::from(v), d + f64::from(v))
            });
            if den > 0.0 {
                num / den
            } else {
                best as f64
            }
        }
    };
    (col, ties)
}

/// Vertex of the parabola through the argmax and its two neighbours,
/// clamped to half a pixel. Written so that mirroring the row negates it.
fn parabolic_offset(values: &[f32], i: usize) -> f64 {
    if i == 0 || i + 1 >= values.len() {
        return 0.0;
    }
    let a = f64::from(values[i - 1]);
    let b = f64::from(values[i]);
    let c = f64::from(values[i + 1]);
    let denom = (a + c) - 2.0 * b;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

/// The normal spine line: a straight reference through two curve points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSegment {
    pub p_top: Point,
    pub p_bottom: Point,
}

impl BaselineSegment {
    /// Column of the infinite line through both endpoints at `row`.
    pub fn col_at(&self, row: f64) -> f64 {
        let t = (row - self.p_top.row) / (self.p_bottom.row - self.p_top.row);
        self.p_top.col + (self.p_bottom.col - self.p_top.col) * t
    }

    /// Perpendicular distance from `p` to the infinite line.
    pub fn distance(&self, p: Point) -> f64 {
        let dr = self.p_bottom.row - self.p_top.row;
        let dc = self.p_bottom.col - self.p_top.col;
        let cross = dr * (p.col - self.p_top.col) - dc * (p.row - self.p_top.row);
        cross.abs() / dr.hypot(dc)
    }

    /// Tilt from vertical, in radians.
    pub fn tilt(&self) -> f64 {
        (self.p_bottom.col - self.p_top.col).atan2(self.p_bottom.row - self.p_top.row)
    }
}

/// 0-based index `ceil(p·n/100)` into `n` ordered rows, clamped to the last.
pub fn percentile_index(n: usize, pct: f64) -> usize {
    let idx = (pct * n as f64 / 100.0).ceil().max(0.0) as usize;
    idx.min(n - 1)
}

/// Join the curve points at the `lo_pct` and `hi_pct` row percentiles.
pub fn build_baseline(curve: &MidCurve, lo_pct: f64, hi_pct: f64) -> Result<BaselineSegment> {
    if curve.len() < 4 {
        return Err(SpineError::InvalidParameter(format!(
            "baseline needs at least 4 curve samples, got {}",
            curve.len()
        )));
    }
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(SpineError::InvalidParameter(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}"
        )));
    }
    let lo = percentile_index(curve.len(), lo_pct);
    let hi = percentile_index(curve.len(), hi_pct);
    if lo == hi {
        return Err(SpineError::DegenerateBaseline(curve.row_start + lo as i64));
    }
    let point = |i: usize| Point::new((curve.row_start + i as i64) as f64, curve.cols[i]);
    Ok(BaselineSegment {
        p_top: point(lo),
        p_bottom: point(hi),
    })
}
