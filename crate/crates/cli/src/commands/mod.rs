pub mod analyze;
pub mod calibrate;
pub mod heatmap;
pub mod rank;
pub mod synth;
