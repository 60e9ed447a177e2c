//! Evaluation protocol: splits, APE, bucketed medians, paired tests,
//! ablations and diagnostics.

mod diagnostics;
mod metrics;
mod pipeline;
mod report;
mod splits;
pub mod stats;

use alloc::string::String;

pub use diagnostics::{
    diagnostics_tables, partial_dependence, residual_summaries, Diagnostics, ImportanceRow, PdpCurve,
    ResidualSummary, PDP_POINTS,
};
pub use metrics::{ape, Bucket, BucketSpec, DealsClass, RoundClass};
pub use pipeline::{
    default_roster, fit_split, loto_records, predict_split, run_ablation, run_split, test_rows, train_rows,
    SplitOutput,
};
pub use report::{
    ablation_report, bucket_report, comparison_table, AblationCell, AblationReport, BucketCell, ComparisonRow,
    PredictionRecord, Variant,
};
pub use splits::{make_splits, make_splits_by_id, SplitPlan, DIAGNOSTICS_SPLIT};
pub use stats::{
    clustered_signed_rank, holm_adjust, median_aggregate_test, wilcoxon_paired, Alternative, ClusteredResult,
    TestResult,
};

use crate::models::FitError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("treatment {treatment} has {found} market(s); at least 2 are needed to split")]
    InsufficientMarkets { treatment: String, found: usize },
    #[error("{found} cluster(s) with nonzero differences; at least 2 are needed")]
    InsufficientClusters { found: usize },
    #[error("no prediction records")]
    EmptyRecords,
    #[error("fitting {model} for {target} on split {split}: {source}")]
    Fit { model: crate::models::ModelKind, target: crate::models::TargetKind, split: u32, source: FitError },
}
