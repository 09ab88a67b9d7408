//! Attention-guided dual-channel re-ranking.
//!
//! Documents and queries arrive as precomputed token and entity embedding
//! matrices. For each query/document pair the engine attends from every query
//! item over the document items, combines the query with its attended view
//! element-wise, mean-pools each interaction pattern, scales by the
//! first-stage score, and scores the concatenated features with a learnable
//! bilinear form `hᵀMh`.
//!
//! Around that core sit the training loop (query-level k-fold
//! cross-validation, Adam with linear warmup, early stopping on validation
//! MAP), score fusion with a first-stage run, TREC-style evaluation and a set
//! of analysis tools (ablations, correlation, noise sensitivity, clustering
//! quality).

pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod hybrid;
pub mod interaction;
pub mod synthetic;
pub mod trainer;

pub use error::{QderError, Result};
