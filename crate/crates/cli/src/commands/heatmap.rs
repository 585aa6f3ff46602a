use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use spinecurve::integral_curvature::{composite_heatmap, heat_color, HeatmapScale};
use spinecurve::mask_io::{load_scan, write_pgm, write_ppm, PgmEncoding, ScanFormat};
use spinecurve::{analyze_mask, heatmap_values, load_softmask, Channel, ScanGrid};

use crate::{parse_pair, AnalysisArgs};

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Fixed κ range `lo,hi` mapped to 0..255 instead of the per-scan range.
    #[arg(long, value_parser = parse_pair)]
    pub absolute: Option<(f64, f64)>,
    /// Output image; `.ppm` gives a colour ramp, anything else a PGM.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Grey scan (PGM or CSV) to composite the heatmap over; implies PPM.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Also write the κ profile as `row,kappa` CSV.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

fn default_out(input: &Path, colour: bool) -> PathBuf {
    let mut s = input.as_os_str().to_owned();
    s.push(if colour { ".heatmap.ppm" } else { ".heatmap.pgm" });
    PathBuf::from(s)
}

pub fn render(args: &HeatmapArgs) -> anyhow::Result<(ScanGrid, PathBuf)> {
    let config = args.analysis.config();
    let scale = match args.absolute {
        Some((lo, hi)) if hi > lo => HeatmapScale::Absolute { lo, hi },
        Some((lo, hi)) => bail!("--absolute needs lo < hi, got {lo},{hi}"),
        None => HeatmapScale::Relative,
    };
    let mask = load_softmask(&args.input)?;
    let analysis = analyze_mask(&mask, &config)?;
    let heat = heatmap_values(
        &analysis.profile,
        &mask,
        Channel::Spine,
        config.support_threshold,
        scale,
    );
    let colour = args.overlay.is_some()
        || args
            .out
            .as_ref()
            .is_some_and(|p| p.extension().is_some_and(|e| e == "ppm"));
    let out = args.out.clone().unwrap_or_else(|| default_out(&args.input, colour));
    if colour {
        let rgb = match &args.overlay {
            Some(p) => {
                let format =
                    ScanFormat::from_path(p).with_context(|| format!("unknown scan format: {}", p.display()))?;
                composite_heatmap(&heat, &load_scan(p, format)?)?
            }
            None => heat.values().iter().map(|&v| heat_color(v)).collect(),
        };
        write_ppm(heat.rows(), heat.cols(), &rgb, &out)?;
    } else {
        write_pgm(&heat, &out, PgmEncoding::Binary)?;
    }
    if let Some(p) = &args.profile {
        std::fs::write(p, analysis.profile.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok((heat, out))
}

pub fn run(args: &HeatmapArgs) -> anyhow::Result<u8> {
    let (_, out) = render(args)?;
    println!("{}", out.display());
    Ok(0)
}
