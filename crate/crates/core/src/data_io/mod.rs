//! On-disk formats and the in-memory data model.
//!
//! Corpora and query sets are stored either as NDJSON (one record per line)
//! or as a packed little-endian binary file. Runs and qrels use the usual
//! TREC text layouts.

mod ndjson;
mod packed;
mod trec;
mod validate;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{QderError, Result};

pub use ndjson::{parse_ndjson, write_ndjson};
pub use packed::{read_packed, write_packed, PACKED_MAGIC, PACKED_VERSION};
pub use trec::{
    load_qrels, load_run, parse_qrels, parse_run, rankings_from_run, sort_ranking, write_run,
    write_run_to,
};
pub use validate::{validate_record, Violation};

/// Longest document accepted by validation, in tokens.
pub const DEFAULT_MAX_SEQ_LEN: usize = 512;

/// Contextualized token embeddings of one text, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub values: Array2<f64>,
}

impl TokenMatrix {
    pub fn new(values: Array2<f64>) -> Self {
        TokenMatrix { values }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// Entity embeddings of one text together with the entity identifiers.
///
/// An entity-free text has zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySet {
    pub entity_ids: Vec<String>,
    pub values: Array2<f64>,
}

impl EntitySet {
    pub fn new(entity_ids: Vec<String>, values: Array2<f64>) -> Self {
        EntitySet { entity_ids, values }
    }

    pub fn empty(dim: usize) -> Self {
        EntitySet {
            entity_ids: Vec::new(),
            values: Array2::zeros((0, dim)),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// A query or a document: an id plus its two embedding channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TextRecord {
    pub id: String,
    pub tokens: TokenMatrix,
    pub entities: EntitySet,
}

pub type QueryRecord = TextRecord;
pub type DocumentRecord = TextRecord;

/// Whether a record file holds queries or documents. Only documents are
/// subject to the sequence-length limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Query,
    Document,
}

/// On-disk layout of a record file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Ndjson,
    Packed,
}

impl std::str::FromStr for RecordFormat {
    type Err = QderError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ndjson" => Ok(RecordFormat::Ndjson),
            "packed" => Ok(RecordFormat::Packed),
            other => Err(QderError::Config(format!(
                "unknown record format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub expected_dt: Option<usize>,
    pub expected_de: Option<usize>,
    pub max_seq_len: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            expected_dt: None,
            expected_de: None,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

/// A loaded, validated record file. All records share `d_t` and `d_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub d_t: usize,
    pub d_e: usize,
    pub records: BTreeMap<String, TextRecord>,
}

impl Collection {
    pub fn get(&self, id: &str) -> Option<&TextRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One first-stage retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub query_id: String,
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Candidates per query, sorted by rank ascending.
pub type Run = BTreeMap<String, Vec<Candidate>>;

/// Scored rankings per query, in emission order.
pub type Rankings = BTreeMap<String, Vec<(String, f64)>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelEntry {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

/// Graded judgments indexed by query, then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn from_entries(entries: impl IntoIterator<Item = QrelEntry>) -> Result<Self> {
        let mut judgments: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for e in entries {
            let per_query = judgments.entry(e.query_id.clone()).or_default();
            if per_query.insert(e.doc_id.clone(), e.grade).is_some() {
                return Err(QderError::Invalid(format!(
                    "duplicate judgment for ({}, {})",
                    e.query_id, e.doc_id
                )));
            }
        }
        Ok(Qrels { judgments })
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|q| q.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &String> {
        self.judgments.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, u32>)> {
        self.judgments.iter()
    }

    /// Number of documents with grade ≥ 1 for the query.
    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map_or(0, |q| q.values().filter(|&&g| g >= 1).count())
    }

    /// Restrict to a subset of queries.
    pub fn restrict<'a>(&self, query_ids: impl IntoIterator<Item = &'a String>) -> Qrels {
        let judgments = query_ids
            .into_iter()
            .filter_map(|q| self.judgments.get(q).map(|j| (q.clone(), j.clone())))
            .collect();
        Qrels { judgments }
    }
}

/// Everything a training or evaluation pipeline consumes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub queries: Collection,
    pub corpus: Collection,
    pub run: Run,
    pub qrels: Qrels,
}

impl Dataset {
    pub fn d_t(&self) -> usize {
        self.corpus.d_t
    }

    pub fn d_e(&self) -> usize {
        self.corpus.d_e
    }
}

/// Sniff the format from the file's leading bytes.
pub fn detect_format(path: &Path) -> Result<RecordFormat> {
    let mut file = File::open(path).map_err(|e| QderError::io(path, e))?;
    let mut head = [0u8; 4];
    let mut filled = 0;
    while filled < head.len() {
        match file.read(&mut head[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) => return Err(QderError::io(path, e)),
        }
    }
    if filled == 4 && &head == PACKED_MAGIC {
        Ok(RecordFormat::Packed)
    } else {
        Ok(RecordFormat::Ndjson)
    }
}

/// Load a document corpus.
pub fn load_corpus(
    path: &Path,
    format: Option<RecordFormat>,
    opts: &LoadOptions,
) -> Result<Collection> {
    load_records(path, format, RecordKind::Document, opts)
}

/// Load a query file. Same layouts as a corpus; no length limit applies.
pub fn load_queries(
    path: &Path,
    format: Option<RecordFormat>,
    opts: &LoadOptions,
) -> Result<Collection> {
    load_records(path, format, RecordKind::Query, opts)
}

pub fn load_records(
    path: &Path,
    format: Option<RecordFormat>,
    kind: RecordKind,
    opts: &LoadOptions,
) -> Result<Collection> {
    let format = match format {
        Some(f) => f,
        None => detect_format(path)?,
    };
    let file = File::open(path).map_err(|e| QderError::io(path, e))?;
    let reader = BufReader::new(file);
    let label = path.display().to_string();
    match format {
        RecordFormat::Ndjson => parse_ndjson(reader, &label, kind, opts),
        RecordFormat::Packed => read_packed(reader, &label, kind, opts),
    }
}

/// Records as parsed, tagged with their line (NDJSON) or ordinal (packed),
/// plus the file's dimensions.
pub(crate) struct Scan {
    pub records: Vec<(usize, TextRecord)>,
    pub d_t: usize,
    pub d_e: usize,
}

/// Every problem found in a record file, rather than only the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub records: usize,
    pub d_t: usize,
    pub d_e: usize,
    /// `(line or record ordinal, record id, message)`.
    pub problems: Vec<(usize, String, String)>,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Parse a record file and run validation over all of it. Structural parse
/// errors still abort; content violations and duplicate ids are collected.
pub fn audit_records(
    path: &Path,
    format: Option<RecordFormat>,
    kind: RecordKind,
    opts: &LoadOptions,
) -> Result<Audit> {
    let format = match format {
        Some(f) => f,
        None => detect_format(path)?,
    };
    let file = File::open(path).map_err(|e| QderError::io(path, e))?;
    let reader = BufReader::new(file);
    let label = path.display().to_string();
    let scan = match format {
        RecordFormat::Ndjson => ndjson::scan_ndjson(reader, &label, opts)?,
        RecordFormat::Packed => packed::scan_packed(reader, &label, opts)?,
    };
    let max_len = match kind {
        RecordKind::Document => Some(opts.max_seq_len),
        RecordKind::Query => None,
    };
    let mut seen = std::collections::BTreeSet::new();
    let mut problems = Vec::new();
    for (line, rec) in &scan.records {
        let ent_dim = if rec.entities.is_empty() {
            scan.d_e
        } else {
            rec.entities.dim()
        };
        let mut rec_view = None;
        if ent_dim != rec.entities.dim() {
            let mut fixed = rec.clone();
            fixed.entities.values = Array2::zeros((0, scan.d_e));
            rec_view = Some(fixed);
        }
        let checked = rec_view.as_ref().unwrap_or(rec);
        for v in validate_record(checked, scan.d_t, scan.d_e, max_len) {
            problems.push((*line, rec.id.clone(), v.to_string()));
        }
        if !seen.insert(rec.id.clone()) {
            problems.push((*line, rec.id.clone(), format!("duplicate id {:?}", rec.id)));
        }
    }
    Ok(Audit {
        records: scan.records.len(),
        d_t: scan.d_t,
        d_e: scan.d_e,
        problems,
    })
}

/// Validate every record of an already-parsed file and assemble the map.
/// Each record carries the line (NDJSON) or record ordinal (packed) used in
/// error messages.
pub(crate) fn assemble(
    parsed: Vec<(usize, TextRecord)>,
    d_t: usize,
    d_e: usize,
    kind: RecordKind,
    opts: &LoadOptions,
    label: &str,
) -> Result<Collection> {
    let mut records = BTreeMap::new();
    for (line, mut rec) in parsed {
        if rec.entities.is_empty() && rec.entities.dim() != d_e {
            rec.entities = EntitySet {
                entity_ids: rec.entities.entity_ids,
                values: Array2::zeros((0, d_e)),
            };
        }
        let max_len = match kind {
            RecordKind::Document => Some(opts.max_seq_len),
            RecordKind::Query => None,
        };
        let violations = validate_record(&rec, d_t, d_e, max_len);
        if let Some(v) = violations.first() {
            return Err(QderError::parse(label, line, v.to_string()));
        }
        if records.contains_key(&rec.id) {
            return Err(QderError::parse(
                label,
                line,
                format!("duplicate id {:?}", rec.id),
            ));
        }
        records.insert(rec.id.clone(), rec);
    }
    Ok(Collection { d_t, d_e, records })
}
