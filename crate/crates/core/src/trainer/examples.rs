use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{Qrels, Run};

/// One labelled training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub query_id: String,
    pub doc_id: String,
    pub label: u8,
    /// First-stage score of the candidate.
    pub s: f64,
}

/// Balanced examples per query.
///
/// Positives are the query's candidates graded ≥ 1. Negatives are candidates
/// graded 0 or unjudged, sampled without replacement to match the number of
/// positives. Queries without positives are dropped; every drop or shortfall
/// is reported in the returned warnings.
pub fn build_examples(
    qrels: &Qrels,
    run: &Run,
    seed: u64,
) -> (BTreeMap<String, Vec<Example>>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    for (qid, cands) in run {
        let (pos, neg): (Vec<_>, Vec<_>) =
            cands.iter().partition(|c| qrels.grade(qid, &c.doc_id) >= 1);
        if pos.is_empty() {
            warnings.push(format!(
                "query {qid}: no relevant candidates, excluded from training"
            ));
            continue;
        }
        let wanted = pos.len().min(neg.len());
        if neg.len() < pos.len() {
            warnings.push(format!(
                "query {qid}: {} positives but only {} negatives",
                pos.len(),
                neg.len()
            ));
        }
        let mut picked: Vec<usize> = sample(&mut rng, neg.len(), wanted).into_vec();
        picked.sort_unstable();

        let example = |c: &crate::data_io::Candidate, label| Example {
            query_id: qid.clone(),
            doc_id: c.doc_id.clone(),
            label,
            s: c.score,
        };
        let mut examples: Vec<Example> = pos.iter().map(|c| example(c, 1)).collect();
        examples.extend(picked.into_iter().map(|i| example(neg[i], 0)));
        out.insert(qid.clone(), examples);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    (out, warnings)
}
