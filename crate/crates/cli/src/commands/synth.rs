use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::Serialize;
use spinecurve::mask_io::CANONICAL_ROWS;
use spinecurve::synth_oracle::{
    generate_corpus_with, generate_softmask, CorpusConfig, GroundTruth, SynthShape, SynthSpec, DEFAULT_PROFILE_SIGMA,
};
use spinecurve::{save_softmask, SoftMask};

use crate::parse_pair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeArg {
    /// Mixed C/S spines with apex angles drawn from `--angle-range`.
    Corpus,
    Straight,
    Arc,
    SCurve,
    Vshape,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = ShapeArg::Corpus)]
    pub shape: ShapeArg,
    #[arg(short = 'n', long = "count", default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Apex angle range in degrees for the corpus.
    #[arg(long, value_parser = parse_pair, default_value = "1,45")]
    pub angle_range: (f64, f64),
    /// Column noise on the midcurve, in pixels.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Curve length for single shapes.
    #[arg(long, default_value_t = 361)]
    pub rows: usize,
    /// Arc radius in pixels.
    #[arg(long, default_value_t = 400.0)]
    pub radius: f64,
    /// S-curve amplitude in pixels.
    #[arg(long, default_value_t = 10.0)]
    pub amplitude: f64,
    /// V-shape offset at the apex in pixels.
    #[arg(long, default_value_t = 20.0)]
    pub offset: f64,
}

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub id: String,
    pub mask: String,
    pub truth: String,
    pub apex_angle_deg: f64,
    pub segments: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub shape: ShapeArg,
    pub seed: u64,
    pub noise_sigma: f64,
    pub entries: Vec<ManifestEntry>,
}

fn single_shape(args: &SynthArgs) -> SynthShape {
    match args.shape {
        ShapeArg::Straight | ShapeArg::Corpus => SynthShape::Straight,
        ShapeArg::Arc => SynthShape::Arc {
            radius: args.radius,
            side: 1.0,
        },
        ShapeArg::SCurve => SynthShape::SCurve {
            amplitude: args.amplitude,
        },
        ShapeArg::Vshape => SynthShape::Vshape {
            offset: args.offset,
            apex_row: (args.rows - 1) as f64 / 2.0,
        },
    }
}

pub fn generate(args: &SynthArgs) -> anyhow::Result<Vec<(SoftMask, GroundTruth)>> {
    if args.n == 0 {
        bail!("-n must be at least 1");
    }
    if args.shape == ShapeArg::Corpus {
        let config = CorpusConfig {
            noise_sigma: args.noise,
            ..CorpusConfig::default()
        };
        return Ok(generate_corpus_with(args.n, args.angle_range, args.seed, &config)?);
    }
    if args.rows < 4 || args.rows > CANONICAL_ROWS {
        bail!("--rows must lie in 4..={CANONICAL_ROWS}");
    }
    let start_row = (CANONICAL_ROWS - args.rows) / 2;
    (0..args.n as u64)
        .map(|i| {
            let spec = SynthSpec::new(single_shape(args), args.rows)
                .with_start_row(start_row)
                .with_noise(args.noise, args.seed.wrapping_add(i));
            Ok(generate_softmask(&spec, DEFAULT_PROFILE_SIGMA)?)
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: &SynthArgs) -> anyhow::Result<u8> {
    let samples = generate(args)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, (mask, truth)) in samples.iter().enumerate() {
        let id = format!("synth_{i:04}");
        let mask_name = format!("{id}.smask");
        let truth_name = format!("{id}.truth.json");
        save_softmask(mask, &args.out_dir.join(&mask_name))?;
        write_json(&args.out_dir.join(&truth_name), truth)?;
        entries.push(ManifestEntry {
            id,
            mask: mask_name,
            truth: truth_name,
            apex_angle_deg: truth.apex_angle_deg,
            segments: truth.expected_segments(),
        });
    }
    let manifest = Manifest {
        shape: args.shape,
        seed: args.seed,
        noise_sigma: args.noise,
        entries,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    println!("{} masks written to {}", samples.len(), args.out_dir.display());
    Ok(0)
}
