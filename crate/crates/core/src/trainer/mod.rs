//! Training of the scoring head: balanced example construction, query-level
//! folds, Adam with linear warmup, and cross-validated re-ranking.

mod examples;
mod folds;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{QderError, Result};
use crate::interaction::{AblationConfig, HeadKind};

pub use examples::{build_examples, Example};
pub use folds::{make_folds, FoldSplit};
pub use optim::{adam_step, bce_loss, bce_with_logits, effective_rate, AdamState};
pub use train::{
    cross_validate, rerank, rerank_query, train_fold, write_epoch_log, CrossValidation, EpochLog,
    FoldOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub folds: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ablation: AblationConfig,
    pub head: HeadKind,
    /// Train per-channel affine maps jointly with the head. Off by default.
    pub adapter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 20,
            epochs: 10,
            warmup_steps: 1000,
            folds: 5,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ablation: AblationConfig::default(),
            head: HeadKind::Bilinear,
            adapter: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(QderError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.folds < 2 {
            return Err(QderError::Config(format!(
                "folds must be ≥ 2, got {}",
                self.folds
            )));
        }
        if self.batch_size == 0 {
            return Err(QderError::Config("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(QderError::Config("Adam betas must lie in [0, 1)".into()));
        }
        self.ablation.validate()
    }
}

/// Seed for a fold-local generator, decorrelated from the base seed.
pub(crate) fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
