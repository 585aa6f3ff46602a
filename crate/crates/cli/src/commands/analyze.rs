use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use spinecurve::{analyze_mask, load_softmask, AnalysisConfig, ScanReport};

use crate::batch::{map_inputs, report_failures};
use crate::{report_path, scan_id, AnalysisArgs, OutputFormat, EXIT_PARTIAL_FAILURE};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// `.smask` files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Summary printed to stdout: one JSON report per line, or a table.
    #[arg(long, value_enum, default_value_t = OutputFormat::Tsv)]
    pub format: OutputFormat,
}

pub fn analyze_file(path: &Path, config: &AnalysisConfig) -> anyhow::Result<ScanReport> {
    let mask = load_softmask(path)?;
    let analysis = analyze_mask(&mask, config)?;
    Ok(analysis.report(&scan_id(path), config))
}

pub fn tsv_header() -> &'static str {
    "scan_id\tmax_angle_deg\tnoc_class\tmax_curvature\tscoliosis_flag"
}

pub fn tsv_line(r: &ScanReport) -> String {
    let noc = serde_json::to_value(r.geometry.noc_class).expect("enum serializes");
    format!(
        "{}\t{:.2}\t{}\t{}\t{}",
        r.scan_id,
        r.geometry.max_angle_deg,
        noc.as_str().unwrap_or_default(),
        r.curvature.max_curvature,
        r.geometry.scoliosis_flag
    )
}

pub fn run(args: &AnalyzeArgs, jobs: usize) -> anyhow::Result<u8> {
    let config = args.analysis.config();
    config.validate()?;
    let results = map_inputs(&args.inputs, jobs, |path| {
        let report = analyze_file(path, &config)?;
        let out = report_path(path);
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(&out, text + "\n").with_context(|| format!("writing {}", out.display()))?;
        Ok(report)
    })?;
    if args.format == OutputFormat::Tsv {
        println!("{}", tsv_header());
    }
    for report in results.iter().flatten() {
        match args.format {
            OutputFormat::Tsv => println!("{}", tsv_line(report)),
            OutputFormat::Json => println!("{}", serde_json::to_string(report)?),
        }
    }
    let failed = report_failures(&args.inputs, &results);
    Ok(if failed > 0 { EXIT_PARTIAL_FAILURE } else { 0 })
}
