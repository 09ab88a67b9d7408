//! Analysis tooling: the ablation matrix, rank correlations between
//! single-operation scorers, a Gaussian noise-sensitivity study and
//! clustering-quality indices for embedding dumps.

mod ablation;
mod cluster;
mod correlation;
mod embedding;
mod noise;
mod rank;

pub use ablation::{
    ablation_suite, ablation_variants, run_variant, write_ablation_csv, AblationOutcome,
    AblationVariant,
};
pub use cluster::{clustering_metrics, ClusterReport};
pub use correlation::{
    operation_correlation, scores_from_rankings, single_op_scores, CorrelationMatrix, ScoreTable,
};
pub use embedding::{
    embedding_dump, read_points, write_points, DumpMode, EmbeddingPoint, LabelKind,
};
pub use noise::{
    angle_deg, noise_sensitivity, write_noise_csv, NoiseInstance, NoiseReport, DEFAULT_SIGMAS,
};
pub use rank::{average_ranks, kendall_tau, spearman};
