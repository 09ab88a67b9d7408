use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{adam_update, bce_with_logits, AdamState};
use super::{build_examples, fold_seed, make_folds, Example, FoldSplit, TrainConfig};
use crate::data_io::{sort_ranking, Dataset, Rankings, TextRecord};
use crate::error::{QderError, Result};
use crate::evaluation::{evaluate, DEFAULT_CUTOFF};
use crate::interaction::{logistic, BilinearModel};

/// One line of the per-epoch training log. Epoch 0 is the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_map: f64,
    /// This epoch's model became the best checkpoint so far.
    pub kept: bool,
}

pub fn write_epoch_log<'a>(
    mut w: impl Write,
    logs: impl IntoIterator<Item = &'a EpochLog>,
) -> std::io::Result<()> {
    for entry in logs {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub split: FoldSplit,
    /// Checkpoint with the highest validation MAP (earliest on ties).
    pub model: BilinearModel,
    pub best_epoch: usize,
    pub best_val_map: f64,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    /// Every query ranked by the model of the fold that held it out.
    pub rankings: Rankings,
    pub folds: Vec<FoldOutcome>,
    /// Query id → fold whose model scored it.
    pub assignment: BTreeMap<String, usize>,
}

fn lookup<'a>(
    dataset: &'a Dataset,
    qid: &str,
    doc_id: &str,
) -> Result<(&'a TextRecord, &'a TextRecord)> {
    let q = dataset
        .queries
        .get(qid)
        .ok_or_else(|| QderError::Invalid(format!("no query record for {qid}")))?;
    let d = dataset
        .corpus
        .get(doc_id)
        .ok_or_else(|| QderError::Invalid(format!("no document record for {doc_id}")))?;
    Ok((q, d))
}

/// Re-score one query's candidates by raw model score, sorted descending
/// with doc id ascending on ties.
pub fn rerank_query(
    model: &BilinearModel,
    dataset: &Dataset,
    qid: &str,
) -> Result<Vec<(String, f64)>> {
    let cands = dataset
        .run
        .get(qid)
        .ok_or_else(|| QderError::Invalid(format!("query {qid} is not in the run")))?;
    let mut out = cands
        .iter()
        .map(|c| {
            let (q, d) = lookup(dataset, qid, &c.doc_id)?;
            Ok((c.doc_id.clone(), model.forward(q, d, c.score)?.raw))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranking(&mut out);
    Ok(out)
}

pub fn rerank<'a>(
    model: &BilinearModel,
    dataset: &Dataset,
    query_ids: impl IntoIterator<Item = &'a String>,
) -> Result<Rankings> {
    let ids: Vec<&String> = query_ids.into_iter().collect();
    let lists = ids
        .par_iter()
        .map(|q| rerank_query(model, dataset, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(ids.into_iter().cloned().zip(lists).collect())
}

/// Candidates of a query set, with features cached when they do not depend
/// on trainable parameters.
struct CandidatePool {
    queries: Vec<(String, Vec<(String, f64)>)>,
    cached: Option<Vec<Vec<Array1<f64>>>>,
}

impl CandidatePool {
    fn new(model: &BilinearModel, dataset: &Dataset, query_ids: &[String]) -> Result<Self> {
        let queries: Vec<(String, Vec<(String, f64)>)> = query_ids
            .iter()
            .map(|q| {
                let cands = dataset
                    .run
                    .get(q)
                    .map(|c| c.iter().map(|c| (c.doc_id.clone(), c.score)).collect());
                (q.clone(), cands.unwrap_or_default())
            })
            .collect();
        let cached = if model.adapter.is_none() {
            let feats = queries
                .par_iter()
                .map(|(qid, cands)| {
                    cands
                        .iter()
                        .map(|(doc, s)| {
                            let (q, d) = lookup(dataset, qid, doc)?;
                            Ok(model.features(q, d, *s)?.concat())
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Some(feats)
        } else {
            None
        };
        Ok(CandidatePool { queries, cached })
    }

    fn rank(&self, model: &BilinearModel, dataset: &Dataset) -> Result<Rankings> {
        let lists = (0..self.queries.len())
            .into_par_iter()
            .map(|qi| {
                let (qid, cands) = &self.queries[qi];
                let mut out = cands
                    .iter()
                    .enumerate()
                    .map(|(ci, (doc, s))| {
                        let raw = match &self.cached {
                            Some(c) => model.score_features(c[qi][ci].view())?,
                            None => {
                                let (q, d) = lookup(dataset, qid, doc)?;
                                model.forward(q, d, *s)?.raw
                            }
                        };
                        Ok((doc.clone(), raw))
                    })
                    .collect::<Result<Vec<_>>>()?;
                sort_ranking(&mut out);
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .queries
            .iter()
            .map(|(q, _)| q.clone())
            .zip(lists)
            .collect())
    }

    fn map(&self, model: &BilinearModel, dataset: &Dataset) -> Result<f64> {
        let rankings = self.rank(model, dataset)?;
        let qrels = dataset.qrels.restrict(self.queries.iter().map(|(q, _)| q));
        Ok(evaluate(&rankings, &qrels, DEFAULT_CUTOFF).map())
    }
}

/// Training examples with cached features when possible.
struct TrainingSet<'a> {
    examples: Vec<&'a Example>,
    cached: Option<Vec<Array1<f64>>>,
}

impl<'a> TrainingSet<'a> {
    fn new(model: &BilinearModel, dataset: &Dataset, examples: Vec<&'a Example>) -> Result<Self> {
        let cached = if model.adapter.is_none() {
            Some(
                examples
                    .par_iter()
                    .map(|e| {
                        let (q, d) = lookup(dataset, &e.query_id, &e.doc_id)?;
                        Ok(model.features(q, d, e.s)?.concat())
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(TrainingSet { examples, cached })
    }

    /// Flat gradient and loss of one example at the current parameters.
    fn gradient(
        &self,
        model: &BilinearModel,
        dataset: &Dataset,
        i: usize,
    ) -> Result<(Vec<f64>, f64)> {
        let e = self.examples[i];
        let label = f64::from(e.label);
        let (grad, raw) = match &self.cached {
            Some(c) => {
                let h = c[i].view();
                let raw = model.score_features(h)?;
                let head = model.head_gradient(h, logistic(raw) - label);
                (
                    crate::interaction::ModelGradient {
                        head,
                        adapter: None,
                    },
                    raw,
                )
            }
            None => {
                let (q, d) = lookup(dataset, &e.query_id, &e.doc_id)?;
                model.backward_with_score(q, d, e.s, label)?
            }
        };
        Ok((grad.to_flat(), bce_with_logits(&[raw], &[label])?))
    }
}

/// Train one fold: seeded shuffles per epoch, mean gradient per batch, Adam
/// with warmup, validation MAP after every epoch.
pub fn train_fold(
    fold: &FoldSplit,
    examples: &BTreeMap<String, Vec<Example>>,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    let seed = fold_seed(cfg.seed, fold.fold_id);
    let mut model =
        BilinearModel::init_with_head(dataset.d_t(), dataset.d_e(), cfg.ablation, cfg.head, seed)?;
    if cfg.adapter {
        model = model.with_adapter();
    }

    let train_examples: Vec<&Example> = fold
        .train_queries
        .iter()
        .filter_map(|q| examples.get(q))
        .flatten()
        .collect();
    if train_examples.is_empty() {
        return Err(QderError::Empty(format!(
            "fold {} has no training examples",
            fold.fold_id
        )));
    }
    let selection_queries = if fold.validation_queries.is_empty() {
        log::warn!(
            "fold {}: no validation queries, selecting checkpoints on training queries",
            fold.fold_id
        );
        &fold.train_queries
    } else {
        &fold.validation_queries
    };

    let train = TrainingSet::new(&model, dataset, train_examples)?;
    let validation = CandidatePool::new(&model, dataset, selection_queries)?;

    let mut best_map = validation.map(&model, dataset)?;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut log = vec![EpochLog {
        fold: fold.fold_id,
        epoch: 0,
        train_loss: None,
        val_map: best_map,
        kept: true,
    }];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(model.param_count());
    let mut params = model.to_flat();
    let mut order: Vec<usize> = (0..train.examples.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let results = batch
                .par_iter()
                .map(|&i| train.gradient(&model, dataset, i))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; params.len()];
            for (g, loss) in results {
                loss_sum += loss;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            adam_update(&mut params, &grad, step, cfg, &mut state)?;
            model.set_flat(&params)?;
        }
        let train_loss = loss_sum / train.examples.len() as f64;
        let val_map = validation.map(&model, dataset)?;
        let kept = val_map > best_map;
        if kept {
            best_map = val_map;
            best_model = model.clone();
            best_epoch = epoch;
        }
        log::info!(
            "fold {} epoch {epoch}: train loss {train_loss:.6}, validation MAP {val_map:.4}{}",
            fold.fold_id,
            if kept { " (kept)" } else { "" }
        );
        log.push(EpochLog {
            fold: fold.fold_id,
            epoch,
            train_loss: Some(train_loss),
            val_map,
            kept,
        });
    }
    Ok(FoldOutcome {
        split: fold.clone(),
        model: best_model,
        best_epoch,
        best_val_map: best_map,
        log,
    })
}

/// Query-level k-fold cross-validation producing an out-of-fold run.
pub fn cross_validate(dataset: &Dataset, cfg: &TrainConfig) -> Result<CrossValidation> {
    cfg.validate()?;
    check_coverage(dataset)?;
    let (examples, _warnings) = build_examples(&dataset.qrels, &dataset.run, cfg.seed);
    let universe: Vec<String> = dataset.run.keys().cloned().collect();
    let splits = make_folds(&universe, cfg.folds, cfg.seed)?;

    let folds = splits
        .par_iter()
        .map(|split| train_fold(split, &examples, dataset, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut rankings = Rankings::new();
    let mut assignment = BTreeMap::new();
    for outcome in &folds {
        let split = &outcome.split;
        let seen: BTreeSet<&String> = split
            .train_queries
            .iter()
            .chain(&split.validation_queries)
            .collect();
        if let Some(q) = split.test_queries.iter().find(|q| seen.contains(q)) {
            return Err(QderError::Invalid(format!(
                "fold {} would score query {q} with a model that trained on it",
                split.fold_id
            )));
        }
        let scored = rerank(&outcome.model, dataset, &split.test_queries)?;
        for (q, list) in scored {
            if assignment.insert(q.clone(), split.fold_id).is_some() {
                return Err(QderError::Invalid(format!(
                    "query {q} is a test query in two folds"
                )));
            }
            rankings.insert(q, list);
        }
    }
    Ok(CrossValidation {
        rankings,
        folds,
        assignment,
    })
}

/// Every run query needs a query record and every candidate a document.
fn check_coverage(dataset: &Dataset) -> Result<()> {
    if dataset.queries.d_t != dataset.corpus.d_t {
        return Err(QderError::Shape(format!(
            "query token dim {} vs corpus token dim {}",
            dataset.queries.d_t, dataset.corpus.d_t
        )));
    }
    let (qe, ce) = (dataset.queries.d_e, dataset.corpus.d_e);
    if qe != ce && qe != 0 && ce != 0 {
        return Err(QderError::Shape(format!(
            "query entity dim {qe} vs corpus entity dim {ce}"
        )));
    }
    for (qid, cands) in &dataset.run {
        if dataset.queries.get(qid).is_none() {
            return Err(QderError::Invalid(format!(
                "no query record for run query {qid}"
            )));
        }
        if let Some(c) = cands
            .iter()
            .find(|c| dataset.corpus.get(&c.doc_id).is_none())
        {
            return Err(QderError::Invalid(format!(
                "no document record for candidate {} of query {qid}",
                c.doc_id
            )));
        }
    }
    Ok(())
}
