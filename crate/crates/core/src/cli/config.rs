use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qder::data_io::DEFAULT_MAX_SEQ_LEN;
use qder::evaluation::DEFAULT_CUTOFF;
use qder::hybrid::HybridConfig;
use qder::interaction::{HeadKind, InteractionOp, OpSet};
use qder::trainer::TrainConfig;
use qder::{QderError, Result};

/// Flat key/value settings read from a `--config` TOML file. Every key is
/// optional; command-line flags override file values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_seq_len: Option<usize>,
    pub k: Option<usize>,

    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub warmup_steps: Option<usize>,
    pub folds: Option<usize>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub ops: Option<Vec<InteractionOp>>,
    pub use_text: Option<bool>,
    pub use_entity: Option<bool>,
    pub use_score_scaling: Option<bool>,
    pub head: Option<HeadKind>,
    pub adapter: Option<bool>,

    pub lambda: Option<f64>,
    pub grid_step: Option<f64>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| QderError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| QderError::Config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Everything a command ran with, after merging defaults, file and flags.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub seed: u64,
    pub max_seq_len: usize,
    pub k: usize,
    pub train: TrainConfig,
    pub hybrid: HybridConfig,
}

impl Resolved {
    pub fn from_settings(s: &Settings) -> Result<Resolved> {
        let mut train = TrainConfig::default();
        let seed = s.seed.unwrap_or(train.seed);
        train.seed = seed;
        macro_rules! take {
            ($target:expr, $($field:ident),*) => {
                $(if let Some(v) = s.$field { $target.$field = v; })*
            };
        }
        take!(
            train,
            learning_rate,
            batch_size,
            epochs,
            warmup_steps,
            folds,
            adam_beta1,
            adam_beta2,
            adam_eps,
            head,
            adapter
        );
        take!(train.ablation, use_text, use_entity, use_score_scaling);
        if let Some(ops) = &s.ops {
            train.ablation.ops = OpSet::of(ops);
        }
        train.validate()?;

        let mut hybrid = HybridConfig::default();
        take!(hybrid, lambda, grid_step);
        hybrid.validate()?;

        let k = s.k.unwrap_or(DEFAULT_CUTOFF);
        if k == 0 {
            return Err(QderError::Config("k must be ≥ 1".into()));
        }
        Ok(Resolved {
            corpus: s.corpus.clone(),
            queries: s.queries.clone(),
            run: s.run.clone(),
            qrels: s.qrels.clone(),
            seed,
            max_seq_len: s.max_seq_len.unwrap_or(DEFAULT_MAX_SEQ_LEN),
            k,
            train,
            hybrid,
        })
    }
}
