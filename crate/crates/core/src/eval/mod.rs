//! Correlation metrics, the logistic mapping, the cross-domain protocol and
//! method comparison tables.

mod compare;
mod logistic;
mod metrics;
mod protocol;

pub use compare::{compare_methods, mean_std, rows_from_csv, rows_to_csv, ComparisonTable, MethodSummary};
pub use logistic::{fit_logistic, logistic5, plcc_after_fit, LogisticFit};
pub use metrics::{average_ranks, pearson, srcc};
pub use protocol::{
    cross_dataset_splits, cross_distortion_splits, run_protocol, score, train_method, ProtocolConfig, ProtocolOutput,
    ReportRow, RunAudit, RunPredictions, Scenario,
};
