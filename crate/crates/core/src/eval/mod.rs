//! Evaluation: open-set accuracies, count error, implicit-class
//! correspondence, run reports, ablation tables and plot data.
//!
//! This is the only module that accepts target ground truth.

mod ablation;
mod metrics;
mod plots;
mod report;

pub use ablation::{ablation_suite, AblationRow, AblationTable, DataFn, MeanSd, ModeSummary};
pub use metrics::{
    correspondence, correspondence_from_probs, k_error, os_metrics, silhouette, Correspondence,
    OsMetrics,
};
pub use plots::{feature_scatter_csv, k_trajectory_csv, loss_curves_csv};
pub use report::{
    build_report, config_hash, evaluate_model, evaluate_run, evaluate_run_with, predictions,
    DiscoverySummary, EpochLog, Evaluator, MetricsReport, Provenance, CORRESPONDENCE_NS,
};
