//! Cross-validated training and evaluation.

pub mod audit;
pub mod cv;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod train;

pub use audit::{AuditRecord, FoldView};
pub use cv::{stratified_kfold, subsample_train, validation_split, Fold};
pub use dataset::{Dataset, PrepConfig};
pub use experiment::{run_experiment, InputDims, ExperimentConfig, ExperimentReport, FoldResult, SummaryRow, ValidationMode, Variant, Widths};
pub use metrics::{auc, mean_std, MeanStd};
pub use train::{predict, train, EpochRecord, InputTransform, TrainConfig, TrainOutcome};
