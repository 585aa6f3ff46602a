use std::cmp::Ordering;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use spinecurve::{predict_angle, RegressorModel};

use super::analyze::analyze_file;
use crate::batch::{map_inputs, report_failures};
use crate::{AnalysisArgs, OutputFormat, EXIT_PARTIAL_FAILURE};

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Regressor from `calibrate`; adds predicted angles.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Tsv)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub scan_id: String,
    pub max_curvature: f64,
    pub predicted_angle_deg: Option<f64>,
    pub scoliosis_flag: bool,
}

/// Most curved first; equal κ ordered by id.
pub fn sort_entries(entries: &mut [RankEntry]) {
    entries.sort_by(|a, b| match b.max_curvature.total_cmp(&a.max_curvature) {
        Ordering::Equal => a.scan_id.cmp(&b.scan_id),
        o => o,
    });
}

pub fn tsv(entries: &[RankEntry]) -> String {
    let mut out = String::from("scan_id\tmax_curvature\tpredicted_angle_deg\tscoliosis_flag\n");
    for e in entries {
        let predicted = e
            .predicted_angle_deg
            .map_or_else(|| "NA".to_string(), |a| format!("{a:.2}"));
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.scan_id, e.max_curvature, predicted, e.scoliosis_flag
        ));
    }
    out
}

pub fn run(args: &RankArgs, jobs: usize) -> anyhow::Result<u8> {
    let config = args.analysis.config();
    config.validate()?;
    let model = match &args.model {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(RegressorModel::from_json(&text).with_context(|| format!("loading model {}", p.display()))?)
        }
        None => None,
    };
    let results = map_inputs(&args.inputs, jobs, |path| {
        let report = analyze_file(path, &config)?;
        let predicted = match &model {
            Some(m) => Some(predict_angle(m, report.curvature.max_curvature)?.0),
            None => None,
        };
        Ok(RankEntry {
            scan_id: report.scan_id,
            max_curvature: report.curvature.max_curvature,
            predicted_angle_deg: predicted,
            scoliosis_flag: report.geometry.scoliosis_flag,
        })
    })?;
    let failed = report_failures(&args.inputs, &results);
    let mut entries: Vec<RankEntry> = results.into_iter().flatten().collect();
    sort_entries(&mut entries);
    match args.format {
        OutputFormat::Tsv => print!("{}", tsv(&entries)),
        OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&entries)?),
    }
    Ok(if failed > 0 { EXIT_PARTIAL_FAILURE } else { 0 })
}
