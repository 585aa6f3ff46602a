//! Fixtures shared by the benchmarks.

use spinecurve::mask_io::encode_softmask;
use spinecurve::synth_oracle::{generate_corpus, generate_softmask, GroundTruth, SynthShape, SynthSpec};
use spinecurve::SoftMask;

/// One "C" and one "S" spine from the synthetic corpus, both around 25°.
pub fn c_and_s() -> (SoftMask, SoftMask) {
    let mut c = None;
    let mut s = None;
    for seed in 0.. {
        let (mask, truth): (SoftMask, GroundTruth) = generate_corpus(1, (25.0, 25.0), seed).unwrap().remove(0);
        match truth.expected_segments() {
            1 if c.is_none() => c = Some(mask),
            2 if s.is_none() => s = Some(mask),
            _ => {}
        }
        if c.is_some() && s.is_some() {
            break;
        }
    }
    (c.unwrap(), s.unwrap())
}

pub fn straight() -> SoftMask {
    let spec = SynthSpec::new(SynthShape::Straight, 380)
        .with_start_row(18)
        .with_noise(0.2, 1);
    generate_softmask(&spec, 2.0).unwrap().0
}

pub fn encoded(mask: &SoftMask) -> Vec<u8> {
    encode_softmask(mask).unwrap()
}
