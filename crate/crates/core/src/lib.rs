// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsm_angle;
pub mod error;
pub mod integral_curvature;
pub mod laplace_regressor;
pub mod mask_io;
pub mod midcurve;
pub mod pipeline;
pub mod synth_oracle;

pub use dsm_angle::{analyze_dsm, is_scoliotic, CurveSegment, GeometryReport, NocClass, SCOLIOSIS_THRESHOLD_DEG};
pub use error::{Result, SpineError};
pub use integral_curvature::{curvature_profile, heatmap_values, CurvatureProfile, HeatmapScale};
pub use laplace_regressor::{predict_angle, train, LabeledSample, RegressorModel, TrainConfig};
pub use mask_io::{load_softmask, save_softmask, Channel, ScanGrid, SoftMask};
pub use midcurve::{build_baseline, extract_midcurve, BaselineSegment, MidCurve, Point, QualityWarning, Refinement};
pub use pipeline::{analyze_mask, Analysis, AnalysisConfig, ScanReport};
