use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data_io::{Qrels, Rankings, Run};
use crate::error::QderError;

pub const DEFAULT_CUTOFF: usize = 20;

/// Average precision over the full ranking. `None` when the query has no
/// relevant judgments.
pub fn average_precision<S: AsRef<str>>(
    ranking: &[S],
    judged: &BTreeMap<String, u32>,
) -> Option<f64> {
    let total_relevant = judged.values().filter(|&&g| g >= 1).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.iter().enumerate() {
        if judged.get(doc.as_ref()).is_some_and(|&g| g >= 1) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// nDCG@k with linear gain and a log₂(rank + 1) discount. `None` when the
/// ideal DCG is zero.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranking: &[S],
    judged: &BTreeMap<String, u32>,
    k: usize,
) -> Option<f64> {
    let discount = |i: usize| ((i + 2) as f64).log2();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / discount(i))
        .sum();
    if idcg == 0.0 {
        return None;
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc)| f64::from(judged.get(doc.as_ref()).copied().unwrap_or(0)) / discount(i))
        .sum();
    Some(dcg / idcg)
}

/// Relevant documents in the top k, divided by k even when fewer than k
/// documents were retrieved.
pub fn precision_at_k<S: AsRef<str>>(
    ranking: &[S],
    judged: &BTreeMap<String, u32>,
    k: usize,
) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|d| judged.get(d.as_ref()).is_some_and(|&g| g >= 1))
        .count();
    hits as f64 / k as f64
}

/// 1 / rank of the first relevant document, 0 if none is retrieved.
pub fn reciprocal_rank<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>) -> f64 {
    ranking
        .iter()
        .position(|d| judged.get(d.as_ref()).is_some_and(|&g| g >= 1))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub ap: f64,
    pub ndcg_at_k: f64,
    pub p_at_k: f64,
    pub rr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ap,
    NdcgAtK,
    PAtK,
    Rr,
}

impl MetricKind {
    pub fn of(self, m: &QueryMetrics) -> f64 {
        match self {
            MetricKind::Ap => m.ap,
            MetricKind::NdcgAtK => m.ndcg_at_k,
            MetricKind::PAtK => m.p_at_k,
            MetricKind::Rr => m.rr,
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = QderError;

    fn from_str(s: &str) -> Result<Self, QderError> {
        match s {
            "map" | "ap" => Ok(MetricKind::Ap),
            "ndcg" | "ndcg_at_k" => Ok(MetricKind::NdcgAtK),
            "p" | "p_at_k" => Ok(MetricKind::PAtK),
            "mrr" | "rr" => Ok(MetricKind::Rr),
            other => Err(QderError::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Per-query and macro-averaged metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub per_query: BTreeMap<String, QueryMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: QueryMetrics,
}

impl MetricReport {
    pub fn map(&self) -> f64 {
        self.macro_avg.ap
    }

    pub fn values(&self, metric: MetricKind) -> BTreeMap<String, f64> {
        self.per_query
            .iter()
            .map(|(q, m)| (q.clone(), metric.of(m)))
            .collect()
    }

    /// Per-query CSV: `query_id,ap,ndcg@k,p@k,rr`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "query_id,ap,ndcg@{k},p@{k},rr", k = self.k)?;
        for (q, m) in &self.per_query {
            writeln!(
                w,
                "{q},{:?},{:?},{:?},{:?}",
                m.ap, m.ndcg_at_k, m.p_at_k, m.rr
            )?;
        }
        w.flush()
    }
}

/// Evaluate rankings (in list order) against qrels.
///
/// Queries without a relevant judgment are skipped. Judged queries absent
/// from the rankings score zero on every metric.
pub fn evaluate(rankings: &Rankings, qrels: &Qrels, k: usize) -> MetricReport {
    let mut per_query = BTreeMap::new();
    for (qid, judged) in qrels.iter() {
        if !judged.values().any(|&g| g >= 1) {
            continue;
        }
        let docs: Vec<&str> = rankings
            .get(qid)
            .map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default();
        let m = QueryMetrics {
            ap: average_precision(&docs, judged).unwrap_or(0.0),
            ndcg_at_k: ndcg_at_k(&docs, judged, k).unwrap_or(0.0),
            p_at_k: precision_at_k(&docs, judged, k),
            rr: reciprocal_rank(&docs, judged),
        };
        per_query.insert(qid.clone(), m);
    }
    let n = per_query.len();
    let macro_avg = if n == 0 {
        QueryMetrics::default()
    } else {
        let sum = per_query
            .values()
            .fold(QueryMetrics::default(), |a, m| QueryMetrics {
                ap: a.ap + m.ap,
                ndcg_at_k: a.ndcg_at_k + m.ndcg_at_k,
                p_at_k: a.p_at_k + m.p_at_k,
                rr: a.rr + m.rr,
            });
        let n = n as f64;
        QueryMetrics {
            ap: sum.ap / n,
            ndcg_at_k: sum.ndcg_at_k / n,
            p_at_k: sum.p_at_k / n,
            rr: sum.rr / n,
        }
    };
    MetricReport {
        k,
        per_query,
        macro_avg,
    }
}

/// Evaluate a run in its rank order.
pub fn evaluate_run(run: &Run, qrels: &Qrels, k: usize) -> MetricReport {
    evaluate(&crate::data_io::rankings_from_run(run), qrels, k)
}
