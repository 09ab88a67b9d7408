//! Planted-signal datasets for tests, demos and the bundled fixture.
//!
//! Every query holds sign-symmetric token pairs `±v` and every document
//! sign-symmetric pairs `±w`. Under row-wise attention the attended view of
//! `−v` is then exactly the negation of the attended view of `v`, so the
//! pooled add and subtract features and the plain query/attended means are
//! all exactly zero. Only the multiply features carry information.
//!
//! Query vectors are sparse on a random coordinate subset. A relevant
//! document contains scaled copies of its query's vectors, which produces a
//! large multiply feature on that subset; a non-relevant document holds
//! dense random vectors. Relevance is therefore recoverable by a quadratic
//! score over the multiply block, while a random bilinear matrix orders each
//! query by an unrelated sign.
//!
//! The last coordinate of every token and entity vector is a constant
//! anchor. It shifts each attention row by a constant, leaving the weights
//! unchanged, and gives the pooled features constant entries through which a
//! bilinear score can express affine terms. Without it `hᵀMh` is homogeneous
//! and cannot threshold on feature magnitude.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_io::{
    sort_ranking, write_ndjson, write_run, Candidate, Collection, Dataset, EntitySet, QrelEntry,
    Qrels, Rankings, TextRecord, TokenMatrix,
};
use crate::error::{QderError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub candidates: usize,
    pub relevant: usize,
    pub d_t: usize,
    pub d_e: usize,
    /// Sign pairs per query (tokens = 2 × this).
    pub query_pairs: usize,
    /// Sign pairs per document.
    pub doc_pairs: usize,
    pub query_entity_pairs: usize,
    pub doc_entity_pairs: usize,
    /// Non-zero coordinates of each query vector, text and entity.
    pub support_t: usize,
    pub support_e: usize,
    /// Scale of the query copies planted in relevant documents.
    pub strength: f64,
    /// Standard deviation of the entries of non-relevant vectors.
    pub background: f64,
    /// Standard deviation of the jitter added to planted copies.
    pub jitter: f64,
    /// Value of the constant last coordinate. Zero disables it.
    pub anchor: f64,
    /// Fraction of non-relevant documents without entities.
    pub entity_free_rate: f64,
    /// First-stage scores are uniform in this range, independent of relevance.
    pub score_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            queries: 40,
            candidates: 100,
            relevant: 10,
            d_t: 16,
            d_e: 8,
            query_pairs: 2,
            doc_pairs: 6,
            query_entity_pairs: 1,
            doc_entity_pairs: 2,
            support_t: 3,
            support_e: 2,
            strength: 3.0,
            background: 0.5,
            jitter: 0.1,
            anchor: 1.0,
            entity_free_rate: 0.1,
            score_range: (0.8, 1.2),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// The small fixture used by the command-line walkthrough.
    pub fn fixture() -> Self {
        SyntheticSpec {
            queries: 10,
            candidates: 30,
            relevant: 4,
            d_t: 8,
            d_e: 4,
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(QderError::Config(format!("synthetic spec: {m}")));
        if self.queries == 0 || self.candidates == 0 {
            return bad("needs at least one query and one candidate");
        }
        if self.relevant == 0 || self.relevant >= self.candidates {
            return bad("relevant must be in 1..candidates");
        }
        if self.d_t == 0 || self.d_e == 0 {
            return bad("dimensions must be positive");
        }
        let free = usize::from(self.anchor != 0.0);
        if self.d_t <= free || self.d_e <= free {
            return bad("dimensions leave no room next to the anchor");
        }
        if self.support_t == 0
            || self.support_t > self.d_t - free
            || self.support_e == 0
            || self.support_e > self.d_e - free
        {
            return bad("support must fit the free coordinates");
        }
        if self.query_pairs == 0 || self.doc_pairs < self.query_pairs {
            return bad("documents need room for every query pair");
        }
        if self.doc_entity_pairs < self.query_entity_pairs {
            return bad("documents need room for every query entity pair");
        }
        if !(0.0..=1.0).contains(&self.entity_free_rate) {
            return bad("entity_free_rate outside [0, 1]");
        }
        if !(self.score_range.0 < self.score_range.1)
            || !self.strength.is_finite()
            || self.jitter < 0.0
            || !(self.background >= 0.0)
        {
            return bad("bad score range, strength or jitter");
        }
        Ok(())
    }
}

fn sparse_vector(rng: &mut ChaCha8Rng, dim: usize, free: usize, support: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for i in index::sample(rng, free, support) {
        let x: f64 = StandardNormal.sample(rng);
        v[i] = x.signum() * (0.5 + x.abs());
    }
    v
}

fn dense_vector(rng: &mut ChaCha8Rng, dim: usize, free: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for x in &mut v[..free] {
        *x = scale * Distribution::<f64>::sample(&StandardNormal, rng);
    }
    v
}

/// Rows `[v₁ … vₖ; −v₁ … −vₖ]`, with the last column set to the anchor.
fn symmetric(rows: &[Vec<f64>], dim: usize, anchor: f64) -> Array2<f64> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let half = Array2::from_shape_vec((rows.len(), dim), flat).expect("row lengths match dim");
    let mut m = concatenate(Axis(0), &[half.view(), (-&half).view()]).expect("same width");
    if anchor != 0.0 {
        m.column_mut(dim - 1).fill(anchor);
    }
    m
}

fn entity_set(prefix: &str, rows: &[Vec<f64>], dim: usize, anchor: f64) -> EntitySet {
    if rows.is_empty() {
        return EntitySet::empty(dim);
    }
    let values = symmetric(rows, dim, anchor);
    let ids = (0..values.nrows())
        .map(|i| format!("{prefix}:E{i}"))
        .collect();
    EntitySet::new(ids, values)
}

/// Build a dataset. Doc ids are `<qid>-D<nnn>` with relevant documents at
/// random positions, so neither id order nor first-stage order reveals them.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.jitter).map_err(|e| QderError::Config(e.to_string()))?;
    let (lo, hi) = spec.score_range;
    let width = spec.candidates.to_string().len().max(3);
    let free = usize::from(spec.anchor != 0.0);
    let (free_t, free_e) = (spec.d_t - free, spec.d_e - free);

    let mut queries = BTreeMap::new();
    let mut corpus = BTreeMap::new();
    let mut run = BTreeMap::new();
    let mut qrels = Vec::new();

    for qi in 0..spec.queries {
        let qid = format!("Q{qi:03}");
        let qv: Vec<Vec<f64>> = (0..spec.query_pairs)
            .map(|_| sparse_vector(&mut rng, spec.d_t, free_t, spec.support_t))
            .collect();
        let qe: Vec<Vec<f64>> = (0..spec.query_entity_pairs)
            .map(|_| sparse_vector(&mut rng, spec.d_e, free_e, spec.support_e))
            .collect();
        queries.insert(
            qid.clone(),
            TextRecord {
                id: qid.clone(),
                tokens: TokenMatrix::new(symmetric(&qv, spec.d_t, spec.anchor)),
                entities: entity_set(&qid, &qe, spec.d_e, spec.anchor),
            },
        );

        let relevant: Vec<usize> =
            index::sample(&mut rng, spec.candidates, spec.relevant).into_vec();
        let mut ranking = Vec::with_capacity(spec.candidates);
        for di in 0..spec.candidates {
            let doc_id = format!("{qid}-D{di:0width$}");
            let is_rel = relevant.contains(&di);
            let planted = |rng: &mut ChaCha8Rng, src: &[Vec<f64>]| -> Vec<Vec<f64>> {
                src.iter()
                    .map(|v| {
                        v.iter()
                            .map(|x| spec.strength * x + jitter.sample(rng))
                            .collect()
                    })
                    .collect()
            };
            let (mut tok, mut ent) = if is_rel {
                (planted(&mut rng, &qv), planted(&mut rng, &qe))
            } else {
                (Vec::new(), Vec::new())
            };
            while tok.len() < spec.doc_pairs {
                tok.push(dense_vector(&mut rng, spec.d_t, free_t, spec.background));
            }
            let entity_free = !is_rel && rng.random::<f64>() < spec.entity_free_rate;
            if entity_free {
                ent.clear();
            } else {
                while ent.len() < spec.doc_entity_pairs {
                    ent.push(dense_vector(&mut rng, spec.d_e, free_e, spec.background));
                }
            }
            tok.shuffle(&mut rng);
            ent.shuffle(&mut rng);
            corpus.insert(
                doc_id.clone(),
                TextRecord {
                    id: doc_id.clone(),
                    tokens: TokenMatrix::new(symmetric(&tok, spec.d_t, spec.anchor)),
                    entities: entity_set(&doc_id, &ent, spec.d_e, spec.anchor),
                },
            );
            let score = rng.random_range(lo..hi);
            if is_rel {
                qrels.push(QrelEntry {
                    query_id: qid.clone(),
                    doc_id: doc_id.clone(),
                    grade: rng.random_range(1..=2),
                });
            }
            ranking.push((doc_id, score));
        }
        sort_ranking(&mut ranking);
        let candidates = ranking
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| Candidate {
                query_id: qid.clone(),
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        run.insert(qid, candidates);
    }

    Ok(Dataset {
        queries: Collection {
            d_t: spec.d_t,
            d_e: spec.d_e,
            records: queries,
        },
        corpus: Collection {
            d_t: spec.d_t,
            d_e: spec.d_e,
            records: corpus,
        },
        run,
        qrels: Qrels::from_entries(qrels)?,
    })
}

/// File names written by [`write_dataset`].
pub const CORPUS_FILE: &str = "corpus.ndjson";
pub const QUERIES_FILE: &str = "queries.ndjson";
pub const RUN_FILE: &str = "first_stage.run";
pub const QRELS_FILE: &str = "qrels.txt";

/// Write a dataset as NDJSON records plus TREC run and qrels files.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| QderError::io(dir, e))?;
    let records = |name: &str, c: &Collection| -> Result<()> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| QderError::io(&path, e))?;
        write_ndjson(BufWriter::new(file), c.records.values()).map_err(|e| QderError::io(&path, e))
    };
    records(CORPUS_FILE, &dataset.corpus)?;
    records(QUERIES_FILE, &dataset.queries)?;

    let rankings: Rankings = crate::data_io::rankings_from_run(&dataset.run);
    write_run(&rankings, "synthetic", &dir.join(RUN_FILE))?;

    let path = dir.join(QRELS_FILE);
    let mut text = String::new();
    for (q, judged) in dataset.qrels.iter() {
        for (d, g) in judged {
            text.push_str(&format!("{q} 0 {d} {g}\n"));
        }
    }
    std::fs::write(&path, text).map_err(|e| QderError::io(&path, e))
}
