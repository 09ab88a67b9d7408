//! TREC-style effectiveness metrics, significance testing and per-query
//! analyses.

mod analysis;
mod metrics;
mod significance;

pub use analysis::{
    difficulty_bins, rank_shift_report, DifficultyBin, DifficultyBins, GradeShift, DEFAULT_EDGES,
};
pub use metrics::{
    average_precision, evaluate, evaluate_run, ndcg_at_k, precision_at_k, reciprocal_rank,
    MetricKind, MetricReport, QueryMetrics, DEFAULT_CUTOFF,
};
pub use significance::{paired_t_test, TTest};
