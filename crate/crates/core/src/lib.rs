//! Leakage-aware stacked-ensemble evaluation.
//!
//! Five base learners feed out-of-fold probabilities to a bank of meta
//! learners under nested stratified cross-validation. The averaged meta score
//! is Platt-recalibrated on cross-fitted meta-OOF scores, thresholded at the
//! smallest F1-optimal grid point and evaluated on held-out outer folds with
//! rank, calibration and decision-curve metrics. Every fit records the study
//! indices it consumed so the whole run can be audited for leakage.

pub mod calibration;
pub mod cohort;
pub mod decision;
pub mod error;
pub mod explain;
pub mod io;
pub mod learners;
pub mod linalg;
pub mod preprocess;
pub mod scalar;
pub mod seed;
pub mod stacking;
pub mod synth;

pub use calibration::{PlattScaler, Reliability};
pub use cohort::{Cohort, FoldPlan, Study};
pub use decision::{DecisionCurve, Metrics};
pub use error::{Error, Result};
pub use explain::ShapValues;
pub use learners::{LearnerSpec, TrainedModel};
pub use preprocess::Clip;
pub use scalar::Scalar;
pub use stacking::{ExperimentReport, MetaBank, MetaFeatureMatrix, RunConfig};

/// Platt recalibration map over `f64` scores.
pub type Recalibrator = PlattScaler<f64>;
/// Five-bin reliability table with its ECE.
pub type ReliabilityTable = Reliability<f64>;
pub type MetricsBundle = Metrics<f64>;
pub type DcaCurve = DecisionCurve<f64>;
/// Per-sample Shapley attributions over the meta-features.
pub type ShapResult = ShapValues<f64>;
/// Preprocessed `(3, T*, 224, 224)` clip.
pub type ClipTensor = Clip<f32>;
