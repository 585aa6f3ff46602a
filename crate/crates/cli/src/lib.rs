//! Command-line front end: `analyze`, `heatmap`, `rank`, `calibrate`,
//! `synth`. Each command is a plain function so tests can drive it without
//! spawning a process.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use spinecurve::integral_curvature::{DEFAULT_GRID_STEP, DEFAULT_MEDIAN_WINDOW, DEFAULT_RADIUS};
use spinecurve::midcurve::DEFAULT_SUPPORT_THRESHOLD;
use spinecurve::pipeline::DEFAULT_MIDCURVE_SMOOTHING;
use spinecurve::{AnalysisConfig, Refinement};

pub mod batch;
pub mod commands;

/// Exit code when at least one input of a batch failed.
pub const EXIT_PARTIAL_FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spinecurve",
    version,
    about = "Spine curvature and scoliosis angles from soft segmentation masks"
)]
pub struct Cli {
    /// Worker threads for batch commands; 0 uses every core.
    #[arg(long, global = true, env = "SPINECURVE_JOBS", default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write `<input>.report.json` for every mask.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Render the per-scanline curvature of one mask as an image.
    Heatmap(commands::heatmap::HeatmapArgs),
    /// Order masks by maximum curvature (TSV on stdout).
    Rank(commands::rank::RankArgs),
    /// Train the curvature-to-angle regressor.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Generate synthetic masks with known geometry.
    Synth(commands::synth::SynthArgs),
}

pub fn run(cli: &Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Analyze(a) => commands::analyze::run(a, cli.jobs),
        Command::Heatmap(a) => commands::heatmap::run(a),
        Command::Rank(a) => commands::rank::run(a, cli.jobs),
        Command::Calibrate(a) => commands::calibrate::run(a),
        Command::Synth(a) => commands::synth::run(a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Tsv,
}

/// Geometry and curvature parameters shared by every command that analyses
/// masks.
#[derive(Debug, Clone, Args)]
pub struct AnalysisArgs {
    /// Probe disk radius in pixels.
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    pub radius: f64,
    /// Segments whose apex lies closer than this to the baseline are dropped.
    #[arg(long, default_value_t = spinecurve::dsm_angle::DEFAULT_MIN_DEVIATION)]
    pub min_deviation: f64,
    /// Baseline percentiles as `lo,hi`.
    #[arg(long, value_parser = parse_pair, default_value = "3,97")]
    pub percentiles: (f64, f64),
    /// Quadrature step for the disk areas, in pixels.
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    pub grid_step: f64,
    /// Moving-average window over the midcurve (odd; 1 disables).
    #[arg(long, default_value_t = DEFAULT_MIDCURVE_SMOOTHING)]
    pub smoothing: usize,
    /// Minimum spine probability for a row to count as supported.
    #[arg(long, default_value_t = DEFAULT_SUPPORT_THRESHOLD)]
    pub support_threshold: f64,
    /// Sub-pixel column estimate per row: argmax, parabolic or soft-argmax.
    #[arg(long, default_value = "parabolic")]
    pub refinement: Refinement,
    /// Median filter window over the curvature profile (odd).
    #[arg(long, default_value_t = DEFAULT_MEDIAN_WINDOW)]
    pub median_window: usize,
}

impl AnalysisArgs {
    pub fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            support_threshold: self.support_threshold,
            refinement: self.refinement,
            midcurve_smoothing: self.smoothing,
            percentiles: self.percentiles,
            min_deviation: self.min_deviation,
            probe_radius: self.radius,
            grid_step: self.grid_step,
            median_window: self.median_window,
        }
    }
}

impl Default for AnalysisArgs {
    fn default() -> Self {
        let c = AnalysisConfig::default();
        AnalysisArgs {
            radius: c.probe_radius,
            min_deviation: c.min_deviation,
            percentiles: c.percentiles,
            grid_step: c.grid_step,
            smoothing: c.midcurve_smoothing,
            support_threshold: c.support_threshold,
            refinement: c.refinement,
            median_window: c.median_window,
        }
    }
}

/// `lo,hi` with two finite numbers.
pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{t}` is not a finite number"))
    };
    Ok((num(a)?, num(b)?))
}

/// File name without a trailing `.smask`.
pub fn scan_id(path: &Path) -> String {
    let name = path
        .file_name()
        .map_or_else(|| path.to_string_lossy(), |n| n.to_string_lossy());
    name.strip_suffix(".smask").unwrap_or(&name).to_string()
}

pub fn report_path(input: &Path) -> PathBuf {
    let mut s = input.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("3,97"), Ok((3.0, 97.0)));
        assert_eq!(parse_pair(" 1 , 1.5"), Ok((1.0, 1.5)));
        assert!(parse_pair("3").is_err());
        assert!(parse_pair("a,1").is_err());
        assert!(parse_pair("1,inf").is_err());
    }

    #[test]
    fn ids_and_report_paths() {
        assert_eq!(scan_id(Path::new("/x/scan_01.smask")), "scan_01");
        assert_eq!(scan_id(Path::new("scan.pgm")), "scan.pgm");
        assert_eq!(
            report_path(Path::new("d/a.smask")),
            PathBuf::from("d/a.smask.report.json")
        );
    }

    #[test]
    fn default_flags_match_library_defaults() {
        assert_eq!(AnalysisArgs::default().config(), AnalysisConfig::default());
        let cli = Cli::try_parse_from(["spinecurve", "analyze", "a.smask"]).unwrap();
        let Command::Analyze(a) = cli.command else { panic!() };
        assert_eq!(a.analysis.config(), AnalysisConfig::default());
    }
}
