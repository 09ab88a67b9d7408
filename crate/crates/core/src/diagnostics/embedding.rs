use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{QderError, Result};
use crate::interaction::{mean_pool, BilinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpMode {
    /// The model's feature vector `h` of each query/document pair.
    QuerySpecific,
    /// Mean of the document's raw token embeddings.
    StaticPool,
}

impl std::str::FromStr for DumpMode {
    type Err = QderError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query_specific" | "query-specific" => Ok(DumpMode::QuerySpecific),
            "static_pool" | "static-pool" => Ok(DumpMode::StaticPool),
            other => Err(QderError::Config(format!("unknown dump mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// "1" for grade ≥ 1, else "0".
    Relevance,
    /// The query id.
    Topic,
}

impl std::str::FromStr for LabelKind {
    type Err = QderError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relevance" => Ok(LabelKind::Relevance),
            "topic" => Ok(LabelKind::Topic),
            other => Err(QderError::Config(format!("unknown label kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    /// `"<query_id> <doc_id>"`.
    pub id: String,
    pub label: String,
    pub vec: Vec<f64>,
}

/// One point per candidate of each listed query, in run order.
pub fn embedding_dump<'a>(
    dataset: &Dataset,
    model: Option<&BilinearModel>,
    mode: DumpMode,
    labels: LabelKind,
    query_ids: impl IntoIterator<Item = &'a String>,
) -> Result<Vec<EmbeddingPoint>> {
    if mode == DumpMode::QuerySpecific && model.is_none() {
        return Err(QderError::Config(
            "query-specific dumps need a model".into(),
        ));
    }
    let mut out = Vec::new();
    for q in query_ids {
        let query = dataset
            .queries
            .get(q)
            .ok_or_else(|| QderError::Invalid(format!("no query record for {q}")))?;
        for c in dataset.run.get(q).into_iter().flatten() {
            let doc = dataset.corpus.get(&c.doc_id).ok_or_else(|| {
                QderError::Invalid(format!("no document record for {}", c.doc_id))
            })?;
            let vec = match (mode, model) {
                (DumpMode::QuerySpecific, Some(m)) => {
                    m.features(query, doc, c.score)?.concat().to_vec()
                }
                _ => mean_pool(doc.tokens.view())?.to_vec(),
            };
            let label = match labels {
                LabelKind::Relevance => {
                    u8::from(dataset.qrels.grade(q, &c.doc_id) >= 1).to_string()
                }
                LabelKind::Topic => q.clone(),
            };
            out.push(EmbeddingPoint {
                id: format!("{q} {}", c.doc_id),
                label,
                vec,
            });
        }
    }
    Ok(out)
}

pub fn write_points(mut w: impl Write, points: &[EmbeddingPoint]) -> std::io::Result<()> {
    for p in points {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_points(reader: impl BufRead, label: &str) -> Result<Vec<EmbeddingPoint>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| QderError::io(label, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|e| QderError::parse(label, i + 1, e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}
