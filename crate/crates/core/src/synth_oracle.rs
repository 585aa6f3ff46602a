//! Synthetic spines with analytic ground truth.
//!
//! Every shape is a closed-form column function of the row. Ground-truth
//! angles come from running the DSM construction on that closed form in
//! continuous coordinates (root bracketing for intersections, golden-section
//! search for apexes), independently of the pixel pipeline under test.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsm_angle::measure_angle;
use crate::error::{Result, SpineError};
use crate::mask_io::{Channel, SoftMask, CANONICAL_COLS, CANONICAL_ROWS};
use crate::midcurve::{percentile_index, MidCurve, Point, DEFAULT_PERCENTILES};

pub const DEFAULT_PROFILE_SIGMA: f64 = 2.0;

/// Column offsets relative to `base_col`, as functions of the local row
/// `y ∈ [0, rows − 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthShape {
    Straight,
    /// Circular arc through both ends, bulging by `R − sqrt(R² − h²)` at mid
    /// length. `side` is +1 (towards larger columns) or −1.
    Arc {
        radius: f64,
        side: f64,
    },
    /// One full sine period over the curve.
    SCurve {
        amplitude: f64,
    },
    /// Two straight legs meeting at `apex_row`, offset by `offset` there.
    Vshape {
        offset: f64,
        apex_row: f64,
    },
    Sinusoid {
        amplitude: f64,
        wavelength: f64,
        phase: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: SynthShape,
    /// Curve length in rows.
    pub rows: usize,
    /// Mask row of the curve's first sample.
    pub start_row: usize,
    pub mask_rows: usize,
    pub mask_cols: usize,
    pub base_col: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(shape: SynthShape, rows: usize) -> Self {
        SynthSpec {
            shape,
            rows,
            start_row: 0,
            mask_rows: CANONICAL_ROWS,
            mask_cols: CANONICAL_COLS,
            base_col: 64.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_start_row(mut self, start_row: usize) -> Self {
        self.start_row = start_row;
        self
    }

    pub fn with_base_col(mut self, base_col: f64) -> Self {
        self.base_col = base_col;
        self
    }

    pub fn with_noise(mut self, noise_sigma: f64, seed: u64) -> Self {
        self.noise_sigma = noise_sigma;
        self.seed = seed;
        self
    }

    fn last(&self) -> f64 {
        (self.rows - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpineError::InvalidParameter(m));
        if self.rows < 4 {
            return bad(format!("synthetic curve needs at least 4 rows, got {}", self.rows));
        }
        if !(self.noise_sigma >= 0.0) || !self.base_col.is_finite() {
            return bad("noise_sigma must be >= 0 and base_col finite".into());
        }
        match self.shape {
            SynthShape::Straight => {}
            SynthShape::Arc { radius, side } => {
                if side.abs() != 1.0 {
                    return bad(format!("arc side must be ±1, got {side}"));
                }
                if !(radius >= self.last() / 2.0) {
                    return bad(format!(
                        "arc of radius {radius} cannot span {} rows as a graph (subtends > 180°)",
                        self.rows
                    ));
                }
            }
            SynthShape::SCurve { amplitude } => {
                if !amplitude.is_finite() {
                    return bad("amplitude must be finite".into());
                }
            }
            SynthShape::Vshape { offset, apex_row } => {
                if !offset.is_finite() || !(apex_row > 0.0 && apex_row < self.last()) {
                    return bad(format!("vshape apex row {apex_row} must be inside the curve"));
                }
            }
            SynthShape::Sinusoid {
                amplitude,
                wavelength,
                phase,
            } => {
                if !(wavelength > 0.0) || !amplitude.is_finite() || !phase.is_finite() {
                    return bad("sinusoid needs a positive wavelength".into());
                }
            }
        }
        Ok(())
    }

    /// Noiseless column offset from `base_col` at local row `y`.
    pub fn offset_at(&self, y: f64) -> f64 {
        let last = self.last();
        match self.shape {
            SynthShape::Straight => 0.0,
            SynthShape::Arc { radius, side } => {
                let half = last / 2.0;
                let r2 = radius * radius;
                side * ((r2 - (y - half).powi(2)).max(0.0).sqrt() - (r2 - half * half).sqrt())
            }
            SynthShape::SCurve { amplitude } => amplitude * (2.0 * PI * y / last).sin(),
            SynthShape::Vshape { offset, apex_row } => {
                if y <= apex_row {
                    offset * y / apex_row
                } else {
                    offset * (last - y) / (last - apex_row)
                }
            }
            SynthShape::Sinusoid {
                amplitude,
                wavelength,
                phase,
            } => amplitude * (2.0 * PI * y / wavelength + phase).sin(),
        }
    }

    /// Noiseless column at local row `y`.
    pub fn col_at(&self, y: f64) -> f64 {
        self.base_col + self.offset_at(y)
    }

    /// Unsigned curvature (1/px) at local row `y`; `None` at a kink.
    pub fn curvature_at(&self, y: f64) -> Option<f64> {
        let last = self.last();
        let from_derivatives = |d1: f64, d2: f64| d2.abs() / (1.0 + d1 * d1).powf(1.5);
        match self.shape {
            SynthShape::Straight => Some(0.0),
            SynthShape::Arc { radius, .. } => Some(1.0 / radius),
            SynthShape::SCurve { amplitude } => {
                let w = 2.0 * PI / last;
                let t = w * y;
                Some(from_derivatives(amplitude * w * t.cos(), -amplitude * w * w * t.sin()))
            }
            SynthShape::Vshape { apex_row, .. } => (y != apex_row).then_some(0.0),
            SynthShape::Sinusoid {
                amplitude,
                wavelength,
                phase,
            } => {
                let w = 2.0 * PI / wavelength;
                let t = w * y + phase;
                Some(from_derivatives(amplitude * w * t.cos(), -amplitude * w * w * t.sin()))
            }
        }
    }
}

/// One analytic DSM segment, in mask rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSegment {
    pub row_a: f64,
    pub row_b: f64,
    pub apex_row: f64,
    pub max_deviation: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// Noiseless closed-form columns at every curve row.
    pub analytic_cols: Vec<f64>,
    pub apex_rows: Vec<f64>,
    pub apex_angle_deg: f64,
    pub segments: Vec<TruthSegment>,
    /// Per curve row; `None` where the curve has a kink.
    pub geometric_curvature: Vec<Option<f64>>,
}

impl GroundTruth {
    pub fn expected_segments(&self) -> usize {
        self.segments.len()
    }
}

/// Deviations below this are treated as no curve at all.
const TRUTH_MIN_DEVIATION: f64 = 1e-6;

/// The DSM construction applied to a continuous column function over
/// `[0, last]`, with baseline endpoints at integer percentile rows.
pub fn analytic_dsm(f: impl Fn(f64) -> f64, rows: usize, lo_pct: f64, hi_pct: f64) -> Vec<TruthSegment> {
    let top = percentile_index(rows, lo_pct) as f64;
    let bottom = percentile_index(rows, hi_pct) as f64;
    let (c_top, c_bottom) = (f(top), f(bottom));
    let line = |y: f64| c_top + (c_bottom - c_top) * (y - top) / (bottom - top);
    let d = |y: f64| f(y) - line(y);
    let cos_tilt = (bottom - top) / (bottom - top).hypot(c_bottom - c_top);

    const SCAN_STEP: f64 = 0.1;
    let steps = ((bottom - top) / SCAN_STEP).ceil() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| (top + i as f64 * SCAN_STEP).min(bottom)).collect();

    let mut cuts = vec![top];
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (d(a), d(b));
        if a > top && da == 0.0 {
            cuts.push(a);
        } else if da * db < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if d(lo) * d(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            cuts.push(0.5 * (lo + hi));
        }
    }
    cuts.push(bottom);
    cuts.dedup();

    let mut segments = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dist = |y: f64| d(y).abs() * cos_tilt;
        // coarse scan, then golden-section search around the best sample
        let n = ((b - a) / SCAN_STEP).ceil().max(2.0) as usize;
        let (mut best_y, mut best) = (a, 0.0);
        for i in 1..n {
            let y = a + (b - a) * i as f64 / n as f64;
            if dist(y) > best {
                best = dist(y);
                best_y = y;
            }
        }
        if best < TRUTH_MIN_DEVIATION {
            continue;
        }
        let span = (b - a) / n as f64;
        let (mut lo, mut hi) = ((best_y - span).max(a), (best_y + span).min(b));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if dist(m1) < dist(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let apex_row = 0.5 * (lo + hi);
        let apex = Point::new(apex_row, f(apex_row));
        let angle =
            measure_angle(Point::new(a, line(a)), Point::new(b, line(b)), apex).expect("apex is off the baseline");
        segments.push(TruthSegment {
            row_a: a,
            row_b: b,
            apex_row,
            max_deviation: dist(apex_row),
            angle_deg: angle,
        });
    }
    segments
}

fn ground_truth(spec: &SynthSpec) -> GroundTruth {
    let offset = spec.start_row as f64;
    let (lo, hi) = DEFAULT_PERCENTILES;
    let mut segments = analytic_dsm(|y| spec.col_at(y), spec.rows, lo, hi);
    for s in &mut segments {
        s.row_a += offset;
        s.row_b += offset;
        s.apex_row += offset;
    }
    // the kink of a V is exact; prefer the closed form over the search
    if let SynthShape::Vshape { offset: o, apex_row } = spec.shape {
        if let [seg] = segments.as_mut_slice() {
            let legs = (o.abs() / apex_row).atan() + (o.abs() / (spec.last() - apex_row)).atan();
            seg.angle_deg = legs.to_degrees();
            seg.apex_row = apex_row + offset;
        }
    }
    GroundTruth {
        spec: *spec,
        analytic_cols: (0..spec.rows).map(|y| spec.col_at(y as f64)).collect(),
        apex_rows: segments.iter().map(|s| s.apex_row).collect(),
        apex_angle_deg: segments.iter().map(|s| s.angle_deg).fold(0.0, f64::max),
        geometric_curvature: (0..spec.rows).map(|y| spec.curvature_at(y as f64)).collect(),
        segments,
    }
}

/// Sample the closed form at every integer row and add seeded column noise.
pub fn generate_curve(spec: &SynthSpec) -> Result<(MidCurve, GroundTruth)> {
    spec.validate()?;
    let truth = ground_truth(spec);
    let mut cols = truth.analytic_cols.clone();
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| SpineError::InvalidParameter(e.to_string()))?;
        for c in &mut cols {
            *c += normal.sample(&mut rng);
        }
    }
    Ok((MidCurve::new(spec.start_row as i64, cols)?, truth))
}

fn paint_bump(mask: &mut SoftMask, channel: Channel, row: usize, centre: f64, sigma: f64) {
    let denom = 2.0 * sigma * sigma;
    for c in 0..mask.cols() {
        let v = (-(c as f64 - centre).powi(2) / denom).exp() as f32;
        mask.set(channel, row, c, v);
    }
}

/// Rows `[lo, hi)` as fractions of the mask height, plus a column fraction
/// and width, for the channels the geometry never reads.
const STATIC_PARTS: [(Channel, f64, f64, f64, f64); 5] = [
    (Channel::Head, 0.0, 0.09, 0.5, 6.0),
    (Channel::PelvicCavity, 0.72, 0.78, 0.5, 4.0),
    (Channel::Pelvis, 0.70, 0.80, 0.5, 8.0),
    (Channel::RightLeg, 0.80, 1.0, 0.35, 3.0),
    (Channel::LeftLeg, 0.80, 1.0, 0.65, 3.0),
];

/// A six-channel mask whose spine channel has a Gaussian bump of width
/// `profile_sigma` and peak 1 centred on every (noisy) curve sample.
pub fn generate_softmask(spec: &SynthSpec, profile_sigma: f64) -> Result<(SoftMask, GroundTruth)> {
    if !(profile_sigma > 0.0) {
        return Err(SpineError::InvalidParameter(format!(
            "profile sigma must be positive, got {profile_sigma}"
        )));
    }
    if spec.start_row + spec.rows > spec.mask_rows || spec.mask_cols < 2 {
        return Err(SpineError::InvalidParameter(format!(
            "curve rows {}..{} do not fit a {}x{} mask",
            spec.start_row,
            spec.start_row + spec.rows,
            spec.mask_rows,
            spec.mask_cols
        )));
    }
    let (curve, truth) = generate_curve(spec)?;
    let mut mask = SoftMask::zeros(spec.mask_rows, spec.mask_cols);
    for (i, &col) in curve.cols().iter().enumerate() {
        paint_bump(&mut mask, Channel::Spine, spec.start_row + i, col, profile_sigma);
    }
    let (rows, cols) = (spec.mask_rows as f64, spec.mask_cols as f64);
    for (channel, lo, hi, at, sigma) in STATIC_PARTS {
        let (r0, r1) = ((lo * rows) as usize, ((hi * rows) as usize).min(spec.mask_rows));
        for r in r0..r1 {
            paint_bump(&mut mask, channel, r, at * (cols - 1.0), sigma);
        }
    }
    Ok((mask, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    C,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub noise_sigma: f64,
    pub profile_sigma: f64,
    /// Rows per lobe; "C" spines have one lobe, "S" spines two.
    pub lobe_rows: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            noise_sigma: 0.3,
            profile_sigma: DEFAULT_PROFILE_SIGMA,
            lobe_rows: 180,
        }
    }
}

/// Half-sine "C" of length `lobe_rows + 1` or full-sine "S" of twice that.
fn lobe_shape(topology: Topology, amplitude: f64, rows: usize) -> SynthShape {
    match topology {
        Topology::C => SynthShape::Sinusoid {
            amplitude,
            wavelength: 2.0 * (rows - 1) as f64,
            phase: 0.0,
        },
        Topology::S => SynthShape::SCurve { amplitude },
    }
}

/// Amplitude whose analytic DSM angle equals `angle_deg`.
fn solve_amplitude(topology: Topology, angle_deg: f64, rows: usize) -> f64 {
    let angle = |amp: f64| {
        let spec = SynthSpec::new(lobe_shape(topology, amp, rows), rows);
        let (lo, hi) = DEFAULT_PERCENTILES;
        analytic_dsm(|y| spec.col_at(y), rows, lo, hi)
            .iter()
            .map(|s| s.angle_deg)
            .fold(0.0, f64::max)
    };
    let (mut lo, mut hi) = (0.0, rows as f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if angle(mid) < angle_deg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `n` masks with apex angles uniform over `angle_range`, mixed C/S.
pub fn generate_corpus_with(
    n: usize,
    angle_range: (f64, f64),
    seed: u64,
    config: &CorpusConfig,
) -> Result<Vec<(SoftMask, GroundTruth)>> {
    let (lo, hi) = angle_range;
    if n == 0 || !(lo > 0.0 && lo <= hi && hi < 90.0) {
        return Err(SpineError::InvalidParameter(format!(
            "corpus needs n >= 1 and 0 < lo <= hi < 90, got n={n}, range=({lo}, {hi})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let topology = if rng.random_bool(0.5) { Topology::C } else { Topology::S };
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let rows = match topology {
            Topology::C => config.lobe_rows + 1,
            Topology::S => 2 * config.lobe_rows + 1,
        };
        let amplitude = solve_amplitude(topology, target, rows);
        let slack = CANONICAL_ROWS.saturating_sub(rows + 40);
        let start_row = 20 + rng.random_range(0..=slack);
        let centre = match topology {
            Topology::C => 63.5 - side * amplitude / 2.0,
            Topology::S => 63.5,
        };
        let spec = SynthSpec {
            shape: lobe_shape(topology, side * amplitude, rows),
            rows,
            start_row,
            mask_rows: CANONICAL_ROWS,
            mask_cols: CANONICAL_COLS,
            base_col: centre + rng.random_range(-4.0..4.0),
            noise_sigma: config.noise_sigma,
            seed: rng.random(),
        };
        out.push(generate_softmask(&spec, config.profile_sigma)?);
    }
    Ok(out)
}

pub fn generate_corpus(n: usize, angle_range: (f64, f64), seed: u64) -> Result<Vec<(SoftMask, GroundTruth)>> {
    generate_corpus_with(n, angle_range, seed, &CorpusConfig::default())
}
