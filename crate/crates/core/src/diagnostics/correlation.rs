use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::spearman;
use crate::data_io::{Dataset, Rankings};
use crate::error::{QderError, Result};
use crate::interaction::{BilinearModel, InteractionOp};

/// Per-operation scores over a shared, ordered list of (query, doc) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub pairs: Vec<(String, String)>,
    pub scores: BTreeMap<InteractionOp, Vec<f64>>,
}

impl ScoreTable {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let ops: Vec<&InteractionOp> = self.scores.keys().collect();
        write!(w, "query_id,doc_id")?;
        for op in &ops {
            write!(w, ",{op}")?;
        }
        writeln!(w)?;
        for (i, (q, d)) in self.pairs.iter().enumerate() {
            write!(w, "{q},{d}")?;
            for op in &ops {
                write!(w, ",{:?}", self.scores[op][i])?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// Score every candidate of `query_ids` with each single-operation model.
pub fn single_op_scores<'a>(
    dataset: &Dataset,
    models: &BTreeMap<InteractionOp, BilinearModel>,
    query_ids: impl IntoIterator<Item = &'a String>,
) -> Result<ScoreTable> {
    let mut pairs = Vec::new();
    let mut inputs = Vec::new();
    for q in query_ids {
        let query = dataset
            .queries
            .get(q)
            .ok_or_else(|| QderError::Invalid(format!("no query record for {q}")))?;
        for c in dataset.run.get(q).into_iter().flatten() {
            let doc = dataset.corpus.get(&c.doc_id).ok_or_else(|| {
                QderError::Invalid(format!("no document record for {}", c.doc_id))
            })?;
            pairs.push((q.clone(), c.doc_id.clone()));
            inputs.push((query, doc, c.score));
        }
    }
    let mut scores = BTreeMap::new();
    for (op, model) in models {
        let v = inputs
            .iter()
            .map(|(q, d, s)| Ok(model.forward(q, d, *s)?.raw))
            .collect::<Result<Vec<f64>>>()?;
        scores.insert(*op, v);
    }
    Ok(ScoreTable { pairs, scores })
}

/// Align per-operation rankings on their (query, doc) pairs. Every run must
/// cover the same pairs.
pub fn scores_from_rankings(runs: &BTreeMap<InteractionOp, Rankings>) -> Result<ScoreTable> {
    let lookup: BTreeMap<InteractionOp, BTreeMap<(&str, &str), f64>> = runs
        .iter()
        .map(|(op, r)| {
            let m = r
                .iter()
                .flat_map(|(q, l)| l.iter().map(move |(d, s)| ((q.as_str(), d.as_str()), *s)))
                .collect();
            (*op, m)
        })
        .collect();
    let mut keys: Option<BTreeSet<(&str, &str)>> = None;
    for (op, m) in &lookup {
        let these: BTreeSet<(&str, &str)> = m.keys().copied().collect();
        match &keys {
            None => keys = Some(these),
            Some(k) if *k != these => {
                return Err(QderError::Invalid(format!(
                    "run for {op} covers different query/document pairs"
                )))
            }
            Some(_) => {}
        }
    }
    let keys = keys.unwrap_or_default();
    let pairs = keys
        .iter()
        .map(|(q, d)| (q.to_string(), d.to_string()))
        .collect();
    let scores = lookup
        .iter()
        .map(|(op, m)| (*op, keys.iter().map(|k| m[k]).collect()))
        .collect();
    Ok(ScoreTable { pairs, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub ops: Vec<InteractionOp>,
    /// Row-major, symmetric, unit diagonal.
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: InteractionOp, b: InteractionOp) -> Option<f64> {
        let i = self.ops.iter().position(|&o| o == a)?;
        let j = self.ops.iter().position(|&o| o == b)?;
        Some(self.values[i][j])
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "op")?;
        for op in &self.ops {
            write!(w, ",{op}")?;
        }
        writeln!(w)?;
        for (op, row) in self.ops.iter().zip(&self.values) {
            write!(w, "{op}")?;
            for v in row {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// Pairwise Spearman correlation between the operations' score vectors.
pub fn operation_correlation(table: &ScoreTable) -> Result<CorrelationMatrix> {
    let ops: Vec<InteractionOp> = table.scores.keys().copied().collect();
    let k = ops.len();
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let r = spearman(&table.scores[&ops[i]], &table.scores[&ops[j]])?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { ops, values })
}
