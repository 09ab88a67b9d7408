use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Candidate, QrelEntry, Rankings, Run};
use crate::error::{QderError, Result};

/// Parse a six-column TREC run: `qid Q0 docid rank score tag`.
pub fn parse_run(reader: impl BufRead, label: &str) -> Result<Run> {
    let mut run: Run = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| QderError::io(label, e))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 6 {
            return Err(QderError::parse(
                label,
                lineno,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let rank: usize =
            cols[3].parse().ok().filter(|&r| r >= 1).ok_or_else(|| {
                QderError::parse(label, lineno, format!("bad rank {:?}", cols[3]))
            })?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| QderError::parse(label, lineno, format!("bad score {:?}", cols[4])))?;
        let (qid, docid) = (cols[0].to_string(), cols[2].to_string());
        if !seen.insert((qid.clone(), docid.clone())) {
            return Err(QderError::parse(
                label,
                lineno,
                format!("duplicate candidate ({qid}, {docid})"),
            ));
        }
        run.entry(qid.clone()).or_default().push(Candidate {
            query_id: qid,
            doc_id: docid,
            score,
            rank,
        });
    }
    for (qid, cands) in run.iter_mut() {
        // Stable: equal ranks would keep file order, but those are rejected below.
        cands.sort_by_key(|c| c.rank);
        if let Some(w) = cands.windows(2).find(|w| w[0].rank == w[1].rank) {
            return Err(QderError::Invalid(format!(
                "{label}: query {qid} has rank {} twice",
                w[0].rank
            )));
        }
    }
    Ok(run)
}

pub fn load_run(path: &Path) -> Result<Run> {
    let file = File::open(path).map_err(|e| QderError::io(path, e))?;
    parse_run(BufReader::new(file), &path.display().to_string())
}

/// Parse four-column qrels `qid 0 docid grade`. Negative grades are clamped
/// to zero; each clamp produces a warning string.
pub fn parse_qrels(reader: impl BufRead, label: &str) -> Result<(Vec<QrelEntry>, Vec<String>)> {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| QderError::io(label, e))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(QderError::parse(
                label,
                lineno,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let raw: i64 = cols[3]
            .parse()
            .map_err(|_| QderError::parse(label, lineno, format!("bad grade {:?}", cols[3])))?;
        let grade = if raw < 0 {
            let msg = format!("{label}:{lineno}: negative grade {raw} clamped to 0");
            log::warn!("{msg}");
            warnings.push(msg);
            0
        } else {
            u32::try_from(raw)
                .map_err(|_| QderError::parse(label, lineno, format!("grade {raw} too large")))?
        };
        let (qid, docid) = (cols[0].to_string(), cols[2].to_string());
        if !seen.insert((qid.clone(), docid.clone())) {
            return Err(QderError::parse(
                label,
                lineno,
                format!("duplicate judgment ({qid}, {docid})"),
            ));
        }
        entries.push(QrelEntry {
            query_id: qid,
            doc_id: docid,
            grade,
        });
    }
    Ok((entries, warnings))
}

pub fn load_qrels(path: &Path) -> Result<(Vec<QrelEntry>, Vec<String>)> {
    let file = File::open(path).map_err(|e| QderError::io(path, e))?;
    parse_qrels(BufReader::new(file), &path.display().to_string())
}

/// Sort descending by score, breaking ties by doc id ascending.
pub fn sort_ranking(ranking: &mut [(String, f64)]) {
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Candidates of a run as (doc, score) lists in rank order.
pub fn rankings_from_run(run: &Run) -> Rankings {
    run.iter()
        .map(|(q, cands)| {
            let list = cands.iter().map(|c| (c.doc_id.clone(), c.score)).collect();
            (q.clone(), list)
        })
        .collect()
}

/// Emit rankings in TREC format. Each query's list is re-sorted by score
/// (doc id ascending on ties) and ranked from 1; empty lists emit nothing.
pub fn write_run_to(mut w: impl Write, rankings: &Rankings, tag: &str) -> std::io::Result<()> {
    for (qid, ranking) in rankings {
        let mut sorted = ranking.clone();
        sort_ranking(&mut sorted);
        for (i, (doc, score)) in sorted.iter().enumerate() {
            if !score.is_finite() {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("non-finite score for ({qid}, {doc})"),
                ));
            }
            // `{:?}` prints the shortest representation that parses back exactly.
            writeln!(w, "{qid} Q0 {doc} {} {score:?} {tag}", i + 1)?;
        }
    }
    w.flush()
}

pub fn write_run(rankings: &Rankings, tag: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| QderError::io(path, e))?;
    write_run_to(BufWriter::new(file), rankings, tag).map_err(|e| QderError::io(path, e))
}
