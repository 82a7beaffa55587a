//! F1 and AUC, split and playback evaluation, and run reports.

pub mod eval;
pub mod report;
pub mod score;

pub use eval::{evaluate, evaluate_playback, Classifier, PlaybackReport, SplitMetrics, DEFAULT_THRESHOLD};
pub use report::{aggregate_runs, MetricsReport, MethodTable};
pub use score::{auc_score, auc_trapezoid, f1_score, roc_curve, Confusion};
