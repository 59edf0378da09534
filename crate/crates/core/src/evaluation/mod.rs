//! Recognition classifier, feature-space metrics, the interpolation
//! baseline and the single-step and long-term evaluation protocols.

pub mod classifier;
pub mod metrics;
pub mod protocol;

pub use classifier::{joint_sequence, train_classifier, ClassifierConfig, ClassifierReport, RecognitionModel};
pub use metrics::{
    accuracy, diversity, fid, interpolation_baseline, multimodality, resample, EquivalenceMap, GaussianFit, MetricCi,
};
pub use protocol::{
    evaluate_long_term, evaluate_single_step, FidMode, LongTermConfig, LongTermReport, SingleStepConfig,
    SingleStepReport,
};
