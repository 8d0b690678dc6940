//! Threshold metrics, precision-recall analysis, stratified folds and the
//! cross-validation driver. The positive class is label 1.

mod crossval;
mod curve;
mod folds;
mod metrics;
mod report;

pub use crossval::{cross_validate, predict_indices, CrossValConfig, CrossValidation, FoldOutcome};
pub use curve::{pr_curve, PrCurve, PrPoint};
pub use folds::{stratified_kfold, FoldPlan};
pub use metrics::{
    confusion, mean_metrics, metrics_from_confusion, ConfusionCounts, MetricsRecord, METRIC_ROWS, THRESHOLD,
};
pub use report::{render_report, BEST_MARKER, UNDEFINED};
