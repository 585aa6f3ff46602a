#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spinecurve::synth_oracle::{generate_corpus, generate_softmask, GroundTruth, SynthShape, SynthSpec};
use spinecurve::{save_softmask, SoftMask};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spinecurve"));
    c.env_remove("SPINECURVE_JOBS");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn mask_of(shape: SynthShape, rows: usize, start: usize, noise: f64, seed: u64) -> (SoftMask, GroundTruth) {
    let spec = SynthSpec::new(shape, rows)
        .with_start_row(start)
        .with_noise(noise, seed);
    generate_softmask(&spec, 2.0).unwrap()
}

pub fn write_mask(dir: &Path, name: &str, mask: &SoftMask) -> PathBuf {
    let p = dir.join(format!("{name}.smask"));
    save_softmask(mask, &p).unwrap();
    p
}

/// A corpus "C" spine whose apex angle is `angle`.
pub fn c_spine(angle: f64) -> (SoftMask, GroundTruth) {
    (0..)
        .map(|seed| generate_corpus(1, (angle, angle), seed).unwrap().remove(0))
        .find(|(_, t)| t.expected_segments() == 1)
        .unwrap()
}

pub fn schema_validator() -> jsonschema::Validator {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/report.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

pub fn schema_errors(v: &jsonschema::Validator, instance: &serde_json::Value) -> Vec<String> {
    v.iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect()
}
