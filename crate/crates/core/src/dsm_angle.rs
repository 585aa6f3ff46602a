//! Automated DXA Scoliosis Method.
//!
//! The midcurve is compared against the normal spine line. Consecutive
//! curve/line intersections bound one scoliotic curve each; the apex is the
//! curve point furthest from the line and the curve's angle is the deviation
//! of the inner apex angle from a straight angle.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Result, SpineError};
use crate::midcurve::{BaselineSegment, MidCurve, Point, QualityWarning};

/// Angles at or above this are scoliotic.
pub const SCOLIOSIS_THRESHOLD_DEG: f64 = 6.0;
pub const DEFAULT_MIN_DEVIATION: f64 = 0.5;

/// |d| below this counts as the curve touching the baseline.
pub const TOUCH_EPSILON: f64 = 1e-9;

pub(crate) fn round2<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 100.0).round() / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn flipped(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSegment {
    pub row_a: f64,
    pub row_b: f64,
    pub apex: Point,
    pub max_deviation: f64,
    #[serde(serialize_with = "round2")]
    pub angle_deg: f64,
    pub side: Side,
}

/// Number-of-curves class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NocClass {
    #[serde(rename = "0")]
    None,
    #[serde(rename = "1")]
    One,
    #[serde(rename = ">1")]
    Many,
}

impl NocClass {
    pub fn from_count(n: usize) -> NocClass {
        match n {
            0 => NocClass::None,
            1 => NocClass::One,
            _ => NocClass::Many,
        }
    }
}

pub fn is_scoliotic(angle_deg: f64) -> bool {
    angle_deg >= SCOLIOSIS_THRESHOLD_DEG
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub segments: Vec<CurveSegment>,
    pub intersections: Vec<f64>,
    #[serde(serialize_with = "round2")]
    pub max_angle_deg: f64,
    pub noc_class: NocClass,
    pub scoliosis_flag: bool,
    /// Filled in by the curvature stage.
    pub max_curvature: Option<f64>,
    pub quality_warnings: Vec<QualityWarning>,
}

impl GeometryReport {
    pub fn from_segments(
        segments: Vec<CurveSegment>,
        intersections: Vec<f64>,
        quality_warnings: Vec<QualityWarning>,
    ) -> GeometryReport {
        let max_angle_deg = segments.iter().map(|s| s.angle_deg).fold(0.0, f64::max);
        GeometryReport {
            noc_class: NocClass::from_count(segments.len()),
            scoliosis_flag: is_scoliotic(max_angle_deg),
            segments,
            intersections,
            max_angle_deg,
            max_curvature: None,
            quality_warnings,
        }
    }
}

fn signed_offset(curve: &MidCurve, baseline: &BaselineSegment, row: f64) -> Result<f64> {
    Ok(curve.eval_at(row)? - baseline.col_at(row))
}

fn sign(d: f64) -> i8 {
    if d.abs() < TOUCH_EPSILON {
        0
    } else if d > 0.0 {
        1
    } else {
        -1
    }
}

/// Rows where the curve crosses the baseline, bracketed by the two baseline
/// end rows. Touching without crossing does not count; a crossing through a
/// run of touching rows is placed at the middle of the run.
pub fn find_intersections(curve: &MidCurve, baseline: &BaselineSegment) -> Result<Vec<f64>> {
    let (top, bottom) = (baseline.p_top.row, baseline.p_bottom.row);
    if top < curve.row_start() as f64 || bottom > curve.row_end() as f64 || top >= bottom {
        return Err(SpineError::Domain(format!(
            "baseline rows [{top}, {bottom}] outside curve rows [{}, {}]",
            curve.row_start(),
            curve.row_end()
        )));
    }
    let mut rows = vec![top];
    let first_inner = top.floor() as i64 + 1;
    let last_inner = bottom.ceil() as i64 - 1;
    rows.extend((first_inner..=last_inner).map(|r| r as f64));
    rows.push(bottom);

    let d: Vec<f64> = rows
        .iter()
        .map(|&r| signed_offset(curve, baseline, r))
        .collect::<Result<_>>()?;

    let mut out = vec![top];
    let mut prev: Option<(usize, i8)> = None;
    for (i, &di) in d.iter().enumerate() {
        let s = sign(di);
        if s == 0 {
            continue;
        }
        if let Some((j, sj)) = prev {
            if sj != s {
                let root = if j + 1 == i {
                    rows[j] + (rows[i] - rows[j]) * d[j] / (d[j] - d[i])
                } else {
                    0.5 * (rows[j + 1] + rows[i - 1])
                };
                if root > top && root < bottom {
                    out.push(root);
                }
            }
        }
        prev = Some((i, s));
    }
    out.push(bottom);
    Ok(out)
}

/// One segment per consecutive intersection pair whose apex deviates at least
/// `min_deviation` pixels from the baseline.
pub fn segment_curves(
    curve: &MidCurve,
    baseline: &BaselineSegment,
    intersections: &[f64],
    min_deviation: f64,
) -> Result<(Vec<CurveSegment>, Vec<QualityWarning>)> {
    let mut segments = Vec::new();
    let mut warnings = Vec::new();
    for pair in intersections.windows(2) {
        let (row_a, row_b) = (pair[0], pair[1]);
        let lo = (row_a.floor() as i64 + 1).max(curve.row_start());
        let hi = (row_b.ceil() as i64 - 1).min(curve.row_end());
        let mut best: Option<(Point, f64)> = None;
        let mut tie: Option<i64> = None;
        for row in lo..=hi {
            let p = Point::new(row as f64, curve.col_at_row(row).expect("row within curve"));
            let dist = baseline.distance(p);
            match best {
                Some((_, b)) if dist < b => {}
                Some((_, b)) if dist == b => {
                    tie.get_or_insert(row);
                }
                _ => {
                    best = Some((p, dist));
                    tie = None;
                }
            }
        }
        let Some((apex, max_deviation)) = best else {
            continue;
        };
        if max_deviation == 0.0 || max_deviation < min_deviation {
            continue;
        }
        if let Some(other_row) = tie {
            warnings.push(QualityWarning::ApexTie {
                row: apex.row as i64,
                other_row,
            });
        }
        let p_a = Point::new(row_a, baseline.col_at(row_a));
        let p_b = Point::new(row_b, baseline.col_at(row_b));
        let d = apex.col - baseline.col_at(apex.row);
        segments.push(CurveSegment {
            row_a,
            row_b,
            apex,
            max_deviation,
            angle_deg: measure_angle(p_a, p_b, apex)?,
            side: if d > 0.0 { Side::Right } else { Side::Left },
        });
    }
    Ok((segments, warnings))
}

/// `|180° − inner|`, where `inner` is the angle at `apex` between the rays to
/// the two segment endpoints.
pub fn measure_angle(p_a: Point, p_b: Point, apex: Point) -> Result<f64> {
    let (ar, ac) = (p_a.row - apex.row, p_a.col - apex.col);
    let (br, bc) = (p_b.row - apex.row, p_b.col - apex.col);
    if (ar == 0.0 && ac == 0.0) || (br == 0.0 && bc == 0.0) || p_a == p_b {
        return Err(SpineError::DegenerateAngle);
    }
    let inner = (ar * bc - ac * br).abs().atan2(ar * br + ac * bc).to_degrees();
    Ok((180.0 - inner).abs())
}

pub fn analyze_dsm(curve: &MidCurve, baseline: &BaselineSegment, min_deviation: f64) -> Result<GeometryReport> {
    let intersections = find_intersections(curve, baseline)?;
    let (segments, warnings) = segment_curves(curve, baseline, &intersections, min_deviation)?;
    Ok(GeometryReport::from_segments(segments, intersections, warnings))
}
