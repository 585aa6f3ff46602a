//! Scan grids, soft segmentation masks and their on-disk formats.
//!
//! Three formats are supported:
//!
//! * PGM, both ASCII (`P2`) and binary (`P5`), maxval up to 65535.
//! * CSV, one scanline per line, comma separated, LF line endings.
//! * `.smask`, a self-describing multi-channel container: one JSON header line
//!   terminated by `\n`, followed by the channels back to back, each stored
//!   row-major as 32-bit little-endian IEEE floats. See `docs/smask.md`.
//!
//! Height normalization maps a trimmed scan into the canonical 416×128 frame
//! with an isotropic bilinear resize followed by a symmetric column crop or pad.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};

pub const CANONICAL_ROWS: usize = 416;
pub const CANONICAL_COLS: usize = 128;

pub const SMASK_MAGIC: &str = "SMASK";
pub const SMASK_VERSION: u32 = 1;
pub const SMASK_DTYPE: &str = "f32le";

/// Tolerance outside `[0, 1]` that is clamped on load instead of rejected.
pub const MASK_RANGE_TOLERANCE: f32 = 1e-6;

/// A single-channel intensity image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScanGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SpineError::Structure(format!(
                "grid dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(SpineError::Structure(format!(
                "expected {} values for a {rows}x{cols} grid, found {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(SpineError::OutOfRange(format!(
                "value {} at index {i} is not a finite non-negative intensity",
                values[i]
            )));
        }
        Ok(ScanGrid { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        ScanGrid {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Body parts of the soft segmentation, in container order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Head,
    Spine,
    PelvicCavity,
    Pelvis,
    RightLeg,
    LeftLeg,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::Head,
        Channel::Spine,
        Channel::PelvicCavity,
        Channel::Pelvis,
        Channel::RightLeg,
        Channel::LeftLeg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Head => "head",
            Channel::Spine => "spine",
            Channel::PelvicCavity => "pelvic_cavity",
            Channel::Pelvis => "pelvis",
            Channel::RightLeg => "right_leg",
            Channel::LeftLeg => "left_leg",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = SpineError;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| SpineError::InvalidParameter(format!("unknown channel `{s}`")))
    }
}

/// Six-channel per-scanline probability grid produced by the upstream
/// segmentation network. Scores are stored as `f32`, matching the container.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    rows: usize,
    cols: usize,
    channels: Vec<Vec<f32>>,
}

impl SoftMask {
    pub fn new(rows: usize, cols: usize, channels: Vec<Vec<f32>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SpineError::Structure(format!(
                "mask dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if channels.len() != Channel::ALL.len() {
            return Err(SpineError::Structure(format!(
                "expected 6 channels, found {}",
                channels.len()
            )));
        }
        for (ch, data) in Channel::ALL.iter().zip(&channels) {
            if data.len() != rows * cols {
                return Err(SpineError::Structure(format!(
                    "channel `{ch}` has {} values, expected {}",
                    data.len(),
                    rows * cols
                )));
            }
            if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(SpineError::OutOfRange(format!(
                    "channel `{ch}` value {} at index {i} outside [0, 1]",
                    data[i]
                )));
            }
        }
        Ok(SoftMask { rows, cols, channels })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "mask dimensions must be positive");
        SoftMask {
            rows,
            cols,
            channels: vec![vec![0.0; rows * cols]; Channel::ALL.len()],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channel(&self, channel: Channel) -> &[f32] {
        &self.channels[channel.index()]
    }

    pub fn channel_row(&self, channel: Channel, row: usize) -> &[f32] {
        &self.channels[channel.index()][row * self.cols..(row + 1) * self.cols]
    }

    pub fn get(&self, channel: Channel, row: usize, col: usize) -> f32 {
        self.channels[channel.index()][row * self.cols + col]
    }

    /// Panics if `value` is outside `[0, 1]`.
    pub fn set(&mut self, channel: Channel, row: usize, col: usize, value: f32) {
        assert!((0.0..=1.0).contains(&value), "mask score {value} outside [0, 1]");
        self.channels[channel.index()][row * self.cols + col] = value;
    }

    /// Mirror every channel about the vertical axis: `col' = cols - 1 - col`.
    pub fn mirrored(&self) -> SoftMask {
        let channels = self
            .channels
            .iter()
            .map(|data| {
                data.chunks(self.cols)
                    .flat_map(|row| row.iter().rev().copied())
                    .collect()
            })
            .collect();
        SoftMask {
            rows: self.rows,
            cols: self.cols,
            channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFormat {
    Pgm,
    Smask,
    Csv,
}

impl ScanFormat {
    pub fn from_path(path: &Path) -> Option<ScanFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(ScanFormat::Pgm),
            "smask" => Some(ScanFormat::Smask),
            "csv" => Some(ScanFormat::Csv),
            _ => None,
        }
    }
}

impl FromStr for ScanFormat {
    type Err = SpineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(ScanFormat::Pgm),
            "smask" => Ok(ScanFormat::Smask),
            "csv" => Ok(ScanFormat::Csv),
            other => Err(SpineError::InvalidParameter(format!("unknown scan format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PgmEncoding {
    /// `P2`
    Ascii,
    /// `P5`
    #[default]
    Binary,
}

pub fn load_scan(path: &Path, format: ScanFormat) -> Result<ScanGrid> {
    let bytes = fs::read(path)?;
    match format {
        ScanFormat::Pgm => parse_pgm(&bytes),
        ScanFormat::Csv => parse_csv(&bytes),
        ScanFormat::Smask => {
            let container = parse_smask(&bytes)?;
            if container.header.channels.len() != 1 {
                return Err(SpineError::Structure(format!(
                    "scan container must hold exactly 1 channel, found {}",
                    container.header.channels.len()
                )));
            }
            let values = container.data[0].iter().map(|&v| f64::from(v)).collect();
            ScanGrid::new(container.header.rows, container.header.cols, values)
        }
    }
}

pub fn save_scan(scan: &ScanGrid, path: &Path, format: ScanFormat) -> Result<()> {
    let bytes = match format {
        ScanFormat::Pgm => encode_pgm(scan, PgmEncoding::Binary)?,
        ScanFormat::Csv => encode_csv(scan).into_bytes(),
        ScanFormat::Smask => {
            let data: Vec<f32> = scan.values.iter().map(|&v| v as f32).collect();
            encode_smask(scan.rows, scan.cols, &["scan"], &[&data])?
        }
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_softmask(path: &Path) -> Result<SoftMask> {
    let bytes = fs::read(path)?;
    parse_softmask(&bytes)
}

pub fn save_softmask(mask: &SoftMask, path: &Path) -> Result<()> {
    fs::write(path, encode_softmask(mask)?)?;
    Ok(())
}

pub fn encode_softmask(mask: &SoftMask) -> Result<Vec<u8>> {
    let names: Vec<&str> = Channel::ALL.iter().map(|c| c.name()).collect();
    let data: Vec<&[f32]> = mask.channels.iter().map(Vec::as_slice).collect();
    encode_smask(mask.rows, mask.cols, &names, &data)
}

/// Decode a six-channel `.smask` container. Channels may appear in any order
/// in the header but are returned in canonical order.
pub fn parse_softmask(bytes: &[u8]) -> Result<SoftMask> {
    let container = parse_smask(bytes)?;
    let header = &container.header;
    if header.channels.len() != Channel::ALL.len() {
        return Err(SpineError::Structure(format!(
            "expected 6 channels, found {}",
            header.channels.len()
        )));
    }
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; Channel::ALL.len()];
    for (name, data) in header.channels.iter().zip(container.data) {
        let channel: Channel = name.parse()?;
        let slot = &mut slots[channel.index()];
        if slot.is_some() {
            return Err(SpineError::Structure(format!("duplicate channel `{name}`")));
        }
        *slot = Some(data);
    }
    let mut channels: Vec<Vec<f32>> = slots.into_iter().map(|s| s.unwrap_or_default()).collect();
    for (channel, data) in Channel::ALL.iter().zip(channels.iter_mut()) {
        for (i, v) in data.iter_mut().enumerate() {
            if *v < -MASK_RANGE_TOLERANCE || *v > 1.0 + MASK_RANGE_TOLERANCE || v.is_nan() {
                return Err(SpineError::OutOfRange(format!(
                    "channel `{channel}` value {v} at index {i} outside [0, 1]"
                )));
            }
            *v = v.clamp(0.0, 1.0);
        }
    }
    SoftMask::new(header.rows, header.cols, channels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SmaskHeader {
    magic: String,
    version: u32,
    rows: usize,
    cols: usize,
    channels: Vec<String>,
    dtype: String,
}

struct SmaskContainer {
    header: SmaskHeader,
    data: Vec<Vec<f32>>,
}

fn encode_smask(rows: usize, cols: usize, names: &[&str], data: &[&[f32]]) -> Result<Vec<u8>> {
    debug_assert_eq!(names.len(), data.len());
    let header = SmaskHeader {
        magic: SMASK_MAGIC.to_string(),
        version: SMASK_VERSION,
        rows,
        cols,
        channels: names.iter().map(|s| s.to_string()).collect(),
        dtype: SMASK_DTYPE.to_string(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(data.len() * rows * cols * 4);
    for channel in data {
        for v in channel.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn parse_smask(bytes: &[u8]) -> Result<SmaskContainer> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| SpineError::parse(bytes.len(), "missing header line terminator"))?;
    let header: SmaskHeader = serde_json::from_slice(&bytes[..newline]).map_err(|e| {
        // serde_json reports 1-based columns on the single header line.
        SpineError::parse(e.column().saturating_sub(1), format!("bad header: {e}"))
    })?;
    if header.magic != SMASK_MAGIC {
        return Err(SpineError::parse(0, format!("bad magic `{}`", header.magic)));
    }
    if header.version != SMASK_VERSION {
        return Err(SpineError::parse(0, format!("unsupported version {}", header.version)));
    }
    if header.dtype != SMASK_DTYPE {
        return Err(SpineError::parse(0, format!("unsupported dtype `{}`", header.dtype)));
    }
    if header.rows == 0 || header.cols == 0 || header.channels.is_empty() {
        return Err(SpineError::Structure(format!(
            "degenerate container: {}x{} with {} channels",
            header.rows,
            header.cols,
            header.channels.len()
        )));
    }
    let plane = header.rows * header.cols;
    let payload = &bytes[newline + 1..];
    let expected = plane * header.channels.len() * 4;
    if payload.len() != expected {
        return Err(SpineError::Structure(format!(
            "payload holds {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(plane * 4)
        .map(|chunk| {
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect();
    Ok(SmaskContainer { header, data })
}

/// Whitespace/comment aware tokenizer for PGM headers and ASCII rasters.
struct PnmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmTokens<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u64> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(SpineError::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SpineError::parse(start, format!("{what} does not fit in 64 bits")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<ScanGrid> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'5') {
        return Err(SpineError::parse(0, "expected PGM magic P2 or P5"));
    }
    let binary = bytes[1] == b'5';
    let mut tok = PnmTokens { bytes, pos: 2 };
    let cols = tok.next_uint("width")? as usize;
    let rows = tok.next_uint("height")? as usize;
    let maxval_at = tok.pos;
    let maxval = tok.next_uint("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(SpineError::parse(
            maxval_at,
            format!("maxval {maxval} not in 1..=65535"),
        ));
    }
    if rows == 0 || cols == 0 {
        return Err(SpineError::Structure(format!("degenerate PGM size {cols}x{rows}")));
    }
    let n = rows * cols;
    let mut values = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates maxval from the raster
        let start = tok.pos + 1;
        let width = if maxval < 256 { 1 } else { 2 };
        let raster = bytes.get(start..).unwrap_or(&[]);
        if raster.len() != n * width {
            return Err(SpineError::Structure(format!(
                "P5 raster holds {} bytes, expected {}",
                raster.len(),
                n * width
            )));
        }
        if width == 1 {
            values.extend(raster.iter().map(|&b| f64::from(b)));
        } else {
            values.extend(
                raster
                    .chunks_exact(2)
                    .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]]))),
            );
        }
        if let Some(i) = values.iter().position(|&v| v > maxval as f64) {
            return Err(SpineError::parse(
                start + i * width,
                format!("sample {} exceeds maxval {maxval}", values[i]),
            ));
        }
    } else {
        for _ in 0..n {
            let at = {
                tok.skip_space();
                tok.pos
            };
            if at >= bytes.len() {
                return Err(SpineError::Structure(format!(
                    "P2 raster ended after {} of {n} samples",
                    values.len()
                )));
            }
            let v = tok.next_uint("sample")?;
            if v > maxval {
                return Err(SpineError::parse(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            values.push(v as f64);
        }
        tok.skip_space();
        if tok.pos != bytes.len() {
            return Err(SpineError::Structure(format!(
                "trailing data after {n} samples at byte {}",
                tok.pos
            )));
        }
    }
    ScanGrid::new(rows, cols, values)
}

/// Encode as PGM. Values must be integers in `0..=65535`; maxval is 255 when
/// every sample fits in a byte, else 65535.
pub fn encode_pgm(scan: &ScanGrid, encoding: PgmEncoding) -> Result<Vec<u8>> {
    if let Some(v) = scan.values.iter().find(|v| v.fract() != 0.0 || **v > 65535.0) {
        return Err(SpineError::OutOfRange(format!(
            "PGM samples must be integers in 0..=65535, found {v}"
        )));
    }
    let maxval: u32 = if scan.max_value() <= 255.0 { 255 } else { 65535 };
    let mut out = Vec::new();
    match encoding {
        PgmEncoding::Ascii => {
            write!(out, "P2\n{} {}\n{maxval}\n", scan.cols, scan.rows)?;
            for row in scan.values.chunks(scan.cols) {
                let line: Vec<String> = row.iter().map(|v| (*v as u32).to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        PgmEncoding::Binary => {
            write!(out, "P5\n{} {}\n{maxval}\n", scan.cols, scan.rows)?;
            for &v in &scan.values {
                if maxval == 255 {
                    out.push(v as u8);
                } else {
                    out.extend_from_slice(&(v as u16).to_be_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_pgm(scan: &ScanGrid, path: &Path, encoding: PgmEncoding) -> Result<()> {
    fs::write(path, encode_pgm(scan, encoding)?)?;
    Ok(())
}

/// Binary PPM (`P6`, maxval 255) from interleaved RGB bytes.
pub fn write_ppm(rows: usize, cols: usize, rgb: &[[u8; 3]], path: &Path) -> Result<()> {
    if rgb.len() != rows * cols {
        return Err(SpineError::Structure(format!(
            "expected {} RGB pixels, found {}",
            rows * cols,
            rgb.len()
        )));
    }
    let mut out = Vec::with_capacity(rgb.len() * 3 + 32);
    write!(out, "P6\n{cols} {rows}\n255\n")?;
    for px in rgb {
        out.extend_from_slice(px);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn parse_csv(bytes: &[u8]) -> Result<ScanGrid> {
    let text = std::str::from_utf8(bytes).map_err(|e| SpineError::parse(e.valid_up_to(), "CSV is not valid UTF-8"))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    let mut offset = 0;
    for line in text.split('\n') {
        let line_start = offset;
        offset += line.len() + 1;
        if line.is_empty() {
            continue;
        }
        let mut field_start = line_start;
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| SpineError::parse(field_start, format!("`{field}` is not a number")))?;
            values.push(v);
            field_start += field.len() + 1;
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(SpineError::Structure(format!(
                    "row {rows} has {n} fields, expected {c}"
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| SpineError::parse(0, "empty CSV"))?;
    ScanGrid::new(rows, cols, values)
}

/// Shortest round-trip decimal representation, so save→load is bit-exact.
pub fn encode_csv(scan: &ScanGrid) -> String {
    let mut out = String::new();
    for row in scan.values.chunks(scan.cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Rows removed from the top and bottom by [`trim_empty_rows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RowCrop {
    pub top: usize,
    pub bottom: usize,
}

/// Strip leading and trailing scanlines whose maximum is `<= threshold`.
pub fn trim_empty_rows(scan: &ScanGrid, threshold: f64) -> Result<(ScanGrid, RowCrop)> {
    if !(threshold >= 0.0) {
        return Err(SpineError::InvalidParameter(format!(
            "threshold must be >= 0, got {threshold}"
        )));
    }
    let occupied = |r: &usize| scan.row(*r).iter().any(|&v| v > threshold);
    let first = (0..scan.rows).find(occupied).ok_or(SpineError::EmptyScan)?;
    let last = (0..scan.rows).rev().find(occupied).unwrap_or(first);
    let values = scan.values[first * scan.cols..(last + 1) * scan.cols].to_vec();
    let trimmed = ScanGrid {
        rows: last + 1 - first,
        cols: scan.cols,
        values,
    };
    Ok((
        trimmed,
        RowCrop {
            top: first,
            bottom: scan.rows - 1 - last,
        },
    ))
}

/// Columns removed (positive) or padded (negative) on each side after scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropOffsets {
    pub top: usize,
    pub bottom: usize,
    pub left: i64,
    pub right: i64,
}

/// The transform from a source scan into the canonical 416×128 frame.
///
/// Pixel centers are aligned: source pixel `p` maps to `(p + 0.5) * s - 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalFrame {
    pub rows: usize,
    pub cols: usize,
    pub scale_factor: f64,
    pub crop_offsets: CropOffsets,
}

impl CanonicalFrame {
    /// Source `(row, col)` to canonical coordinates.
    pub fn to_canonical(&self, row: f64, col: f64) -> (f64, f64) {
        let s = self.scale_factor;
        let r = (row - self.crop_offsets.top as f64 + 0.5) * s - 0.5;
        let c = (col + 0.5) * s - 0.5 - self.crop_offsets.left as f64;
        (r, c)
    }

    /// Canonical `(row, col)` back to source coordinates.
    pub fn to_source(&self, row: f64, col: f64) -> (f64, f64) {
        let s = self.scale_factor;
        let r = (row + 0.5) / s - 0.5 + self.crop_offsets.top as f64;
        let c = (col + self.crop_offsets.left as f64 + 0.5) / s - 0.5;
        (r, c)
    }
}

/// Isotropic resize to 416 rows, then symmetric crop or zero-pad to 128 columns.
pub fn normalize_height(scan: &ScanGrid) -> Result<(ScanGrid, CanonicalFrame)> {
    if scan.rows < 2 || scan.cols < 2 {
        return Err(SpineError::Structure(format!(
            "cannot normalize a {}x{} scan; need at least 2x2",
            scan.rows, scan.cols
        )));
    }
    let s = CANONICAL_ROWS as f64 / scan.rows as f64;
    let scaled_cols = (scan.cols as f64 * s).round() as i64;
    let diff = scaled_cols - CANONICAL_COLS as i64;
    // symmetric split; the extra column of an odd difference goes right
    let left = if diff >= 0 { diff / 2 } else { -((-diff) / 2) };
    let right = diff - left;

    let src_coord = |dst: usize, len: usize| -> (usize, usize, f64) {
        let x = ((dst as f64 + 0.5) / s - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, x - i0 as f64)
    };

    let mut out = ScanGrid::zeros(CANONICAL_ROWS, CANONICAL_COLS);
    for r in 0..CANONICAL_ROWS {
        let (r0, r1, fr) = src_coord(r, scan.rows);
        for c in 0..CANONICAL_COLS {
            let j = c as i64 + left;
            if j < 0 || j >= scaled_cols {
                continue;
            }
            let (c0, c1, fc) = src_coord(j as usize, scan.cols);
            let top = scan.get(r0, c0) * (1.0 - fc) + scan.get(r0, c1) * fc;
            let bottom = scan.get(r1, c0) * (1.0 - fc) + scan.get(r1, c1) * fc;
            out.set(r, c, top * (1.0 - fr) + bottom * fr);
        }
    }
    let frame = CanonicalFrame {
        rows: CANONICAL_ROWS,
        cols: CANONICAL_COLS,
        scale_factor: s,
        crop_offsets: CropOffsets {
            top: 0,
            bottom: 0,
            left,
            right,
        },
    };
    Ok((out, frame))
}

/// Trim empty rows, then normalize. The frame records the trimmed rows too.
pub fn normalize_scan(scan: &ScanGrid, threshold: f64) -> Result<(ScanGrid, CanonicalFrame)> {
    let (trimmed, crop) = trim_empty_rows(scan, threshold)?;
    let (out, mut frame) = normalize_height(&trimmed)?;
    frame.crop_offsets.top = crop.top;
    frame.crop_offsets.bottom = crop.bottom;
    Ok((out, frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rows: usize, cols: usize, seed: u64, integer: bool) -> ScanGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..rows * cols)
            .map(|_| {
                if integer {
                    f64::from(rng.random_range(0u16..=4095))
                } else {
                    rng.random_range(0.0..1000.0)
                }
            })
            .collect();
        ScanGrid::new(rows, cols, values).unwrap()
    }

    #[test]
    fn csv_direct_readback() {
        let g = parse_csv(b"0,1\n2,3\n4,5").unwrap();
        assert_eq!((g.rows(), g.cols()), (3, 2));
        assert_eq!(g.values(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn pgm_p2_zero_grid() {
        let g = parse_pgm(b"P2 2 2 255 0 0 0 0").unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 2));
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pgm_comments_and_16_bit() {
        let g = parse_pgm(b"P2\n# a comment\n3 1\n65535\n0 300 65535\n").unwrap();
        assert_eq!(g.values(), &[0.0, 300.0, 65535.0]);
        let bytes = encode_pgm(&g, PgmEncoding::Binary).unwrap();
        assert!(bytes.starts_with(b"P5\n3 1\n65535\n"));
        assert_eq!(parse_pgm(&bytes).unwrap(), g);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        match parse_pgm(b"P2 2 x 255") {
            Err(SpineError::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv(b"1,2\n3,abc\n") {
            Err(SpineError::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_pgm(b"P3 1 1 255 0"),
            Err(SpineError::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn dimension_mismatches_are_structural() {
        assert!(matches!(parse_pgm(b"P2 2 2 255 0 0 0"), Err(SpineError::Structure(_))));
        assert!(matches!(
            parse_pgm(b"P5 2 2 255\n\x00\x00\x00"),
            Err(SpineError::Structure(_))
        ));
        assert!(matches!(parse_csv(b"1,2\n3\n"), Err(SpineError::Structure(_))));
    }

    #[test]
    fn round_trip_all_formats_411x128() {
        let dir = tempfile::tempdir().unwrap();
        let int_grid = random_grid(411, 128, 7, true);
        for (name, format) in [("a.pgm", ScanFormat::Pgm), ("a.csv", ScanFormat::Csv)] {
            let path = dir.path().join(name);
            save_scan(&int_grid, &path, format).unwrap();
            assert_eq!(load_scan(&path, format).unwrap(), int_grid);
        }
        let real = random_grid(411, 128, 8, false);
        let path = dir.path().join("b.csv");
        save_scan(&real, &path, ScanFormat::Csv).unwrap();
        assert_eq!(load_scan(&path, ScanFormat::Csv).unwrap(), real);

        // f32 container: values representable in f32 survive exactly
        let values = real.values().iter().map(|&v| f64::from(v as f32)).collect();
        let f32_grid = ScanGrid::new(411, 128, values).unwrap();
        let path = dir.path().join("c.smask");
        save_scan(&f32_grid, &path, ScanFormat::Smask).unwrap();
        assert_eq!(load_scan(&path, ScanFormat::Smask).unwrap(), f32_grid);

        let ascii = encode_pgm(&int_grid, PgmEncoding::Ascii).unwrap();
        assert_eq!(parse_pgm(&ascii).unwrap(), int_grid);
    }

    #[test]
    fn pgm_rejects_fractional_values() {
        let g = ScanGrid::new(1, 2, vec![0.5, 1.0]).unwrap();
        assert!(encode_pgm(&g, PgmEncoding::Binary).is_err());
    }

    #[test]
    fn softmask_zero_channels() {
        let mask = SoftMask::zeros(4, 4);
        let back = parse_softmask(&encode_softmask(&mask).unwrap()).unwrap();
        assert_eq!(back, mask);
        assert!(Channel::ALL.iter().all(|&c| back.channel(c).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn softmask_channel_count_and_range_errors() {
        let plane = vec![0.0f32; 16];
        let planes: Vec<&[f32]> = vec![&plane; 5];
        let bytes = encode_smask(
            4,
            4,
            &["head", "spine", "pelvic_cavity", "pelvis", "right_leg"],
            &planes,
        )
        .unwrap();
        let err = parse_softmask(&bytes).unwrap_err();
        assert!(err.to_string().contains("expected 6 channels"), "{err}");

        let mut mask = SoftMask::zeros(2, 2);
        mask.channels[1][0] = 1.5;
        let err = parse_softmask(&encode_softmask(&mask).unwrap()).unwrap_err();
        assert!(matches!(err, SpineError::OutOfRange(_)));

        // within tolerance: clamped, not rejected
        mask.channels[1][0] = 1.0 + 5e-7;
        let back = parse_softmask(&encode_softmask(&mask).unwrap()).unwrap();
        assert_eq!(back.get(Channel::Spine, 0, 0), 1.0);
    }

    #[test]
    fn softmask_truncated_payload() {
        let mut bytes = encode_softmask(&SoftMask::zeros(3, 3)).unwrap();
        bytes.pop();
        assert!(matches!(parse_softmask(&bytes), Err(SpineError::Structure(_))));
        assert!(matches!(parse_softmask(b"{\"magic\":"), Err(SpineError::Parse { .. })));
    }

    #[test]
    fn trim_example() {
        let mut values = vec![0.0; 10 * 2];
        for r in 3..8 {
            values[r * 2] = 1.0;
        }
        let g = ScanGrid::new(10, 2, values).unwrap();
        let (t, crop) = trim_empty_rows(&g, 0.0).unwrap();
        assert_eq!(t.rows(), 5);
        assert_eq!(crop, RowCrop { top: 3, bottom: 2 });

        let full = random_grid(6, 3, 1, true);
        let full = ScanGrid::new(6, 3, full.values().iter().map(|v| v + 1.0).collect()).unwrap();
        let (same, crop) = trim_empty_rows(&full, 0.0).unwrap();
        assert_eq!(same, full);
        assert_eq!(crop, RowCrop::default());

        assert!(matches!(
            trim_empty_rows(&ScanGrid::zeros(3, 3), 0.0),
            Err(SpineError::EmptyScan)
        ));
    }

    #[test]
    fn normalize_doubles_208x64() {
        let g = random_grid(208, 64, 3, false);
        let (out, frame) = normalize_height(&g).unwrap();
        assert_eq!((out.rows(), out.cols()), (416, 128));
        assert_eq!(frame.scale_factor, 2.0);
        assert_eq!((frame.crop_offsets.left, frame.crop_offsets.right), (0, 0));
    }

    #[test]
    fn normalize_identity_416x128() {
        let g = random_grid(416, 128, 4, false);
        let (out, frame) = normalize_height(&g).unwrap();
        assert_eq!(out, g);
        assert_eq!(frame.scale_factor, 1.0);
    }

    #[test]
    fn normalize_max_raw_size() {
        let g = random_grid(411, 128, 5, false);
        let (out, frame) = normalize_height(&g).unwrap();
        assert_eq!((out.rows(), out.cols()), (416, 128));
        assert_eq!(frame.scale_factor, 416.0 / 411.0);
        // 128 * 416/411 = 129.56 -> 130 scaled columns, crop 1 each side
        assert_eq!((frame.crop_offsets.left, frame.crop_offsets.right), (1, 1));
        for &(r, c) in &[(0.0, 0.0), (205.0, 64.0), (410.0, 127.0), (17.25, 3.5)] {
            let (cr, cc) = frame.to_canonical(r, c);
            let (br, bc) = frame.to_source(cr.round(), cc.round());
            assert!((br - r).abs() <= 0.51 && (bc - c).abs() <= 0.51);
        }
    }

    #[test]
    fn normalize_pads_narrow_scans() {
        let g = ScanGrid::new(416, 100, vec![1.0; 416 * 100]).unwrap();
        let (out, frame) = normalize_height(&g).unwrap();
        assert_eq!((frame.crop_offsets.left, frame.crop_offsets.right), (-14, -14));
        assert_eq!(out.get(0, 13), 0.0);
        assert_eq!(out.get(0, 14), 1.0);
        assert_eq!(out.get(0, 113), 1.0);
        assert_eq!(out.get(0, 114), 0.0);
    }

    #[test]
    fn normalize_rejects_degenerate() {
        assert!(normalize_height(&ScanGrid::zeros(1, 5)).is_err());
    }

    proptest! {
        #[test]
        fn trim_is_idempotent(
            rows in 1usize..20, cols in 1usize..6, seed in any::<u64>(), sparsity in 0.0f64..0.9
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..rows * cols)
                .map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random_range(0.0..5.0) })
                .collect();
            let g = ScanGrid::new(rows, cols, values).unwrap();
            if let Ok((t, _)) = trim_empty_rows(&g, 0.0) {
                let (t2, crop2) = trim_empty_rows(&t, 0.0).unwrap();
                prop_assert_eq!(t2, t);
                prop_assert_eq!(crop2, RowCrop::default());
            }
        }

        #[test]
        fn normalize_output_is_canonical(rows in 2usize..600, cols in 2usize..300) {
            let g = ScanGrid::new(rows, cols, vec![1.0; rows * cols]).unwrap();
            let (out, frame) = normalize_height(&g).unwrap();
            prop_assert_eq!((out.rows(), out.cols()), (CANONICAL_ROWS, CANONICAL_COLS));
            prop_assert_eq!(frame.scale_factor, CANONICAL_ROWS as f64 / rows as f64);
        }

        #[test]
        fn frame_inverse_within_half_pixel(
            rows in 173usize..=411, top in 0usize..10, r in 0.0f64..1.0, c in 0.0f64..1.0
        ) {
            let g = ScanGrid::new(rows, 128, vec![1.0; rows * 128]).unwrap();
            let (_, mut frame) = normalize_height(&g).unwrap();
            frame.crop_offsets.top = top;
            let (row, col) = (top as f64 + r * (rows - 1) as f64, c * 127.0);
            let (cr, cc) = frame.to_canonical(row, col);
            let (br, bc) = frame.to_source(cr, cc);
            prop_assert!((br - row).abs() < 1e-9 && (bc - col).abs() < 1e-9);
            let (qr, qc) = frame.to_source(cr.round(), cc.round());
            prop_assert!((qr - row).abs() <= 0.51 && (qc - col).abs() <= 0.51);
        }
    }
}
