use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{MetricKind, MetricReport};
use crate::data_io::{Qrels, Rankings};
use crate::error::{QderError, Result};

/// Default percentile edges for difficulty stratification.
pub const DEFAULT_EDGES: [f64; 6] = [5.0, 25.0, 50.0, 75.0, 95.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBin {
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub queries: Vec<String>,
    /// Macro metric per system; `None` for an empty bin.
    pub macro_by_system: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBins {
    pub metric: MetricKind,
    pub edges: Vec<f64>,
    pub bins: Vec<DifficultyBin>,
}

impl DifficultyBins {
    /// CSV: `lower_pct,upper_pct,n_queries,<system...>`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let systems: Vec<&String> = self
            .bins
            .first()
            .map(|b| b.macro_by_system.keys().collect())
            .unwrap_or_default();
        write!(w, "lower_pct,upper_pct,n_queries")?;
        for s in &systems {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
        for b in &self.bins {
            write!(w, "{},{},{}", b.lower_pct, b.upper_pct, b.queries.len())?;
            for s in &systems {
                match b.macro_by_system[*s] {
                    Some(v) => write!(w, ",{v:?}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// Stratify queries by the baseline's per-query metric (ascending, hardest
/// first) and macro-average every system inside each percentile bin.
///
/// Bin `i` covers sorted positions `[round(e_{i-1}·n/100), round(e_i·n/100))`.
/// The baseline is always reported under the name `"baseline"`.
pub fn difficulty_bins(
    baseline: &MetricReport,
    systems: &[(&str, &MetricReport)],
    metric: MetricKind,
    edges: &[f64],
) -> Result<DifficultyBins> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QderError::Config(
            "edges must be strictly increasing and non-empty".into(),
        ));
    }
    if edges[0] <= 0.0 || *edges.last().unwrap() > 100.0 {
        return Err(QderError::Config("edges must lie in (0, 100]".into()));
    }
    for (name, report) in systems {
        if report.per_query.keys().ne(baseline.per_query.keys()) {
            return Err(QderError::Invalid(format!(
                "system {name} was evaluated on a different query set"
            )));
        }
    }
    let base_values = baseline.values(metric);
    let mut order: Vec<(&String, f64)> = base_values.iter().map(|(q, &v)| (q, v)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = order.len();
    let cut = |pct: f64| ((pct * n as f64 / 100.0).round() as usize).min(n);

    let mut all: Vec<(&str, &MetricReport)> = vec![("baseline", baseline)];
    all.extend_from_slice(systems);

    let mut bins = Vec::with_capacity(edges.len());
    let mut lower = 0.0;
    for &upper in edges {
        let queries: Vec<String> = order[cut(lower)..cut(upper)]
            .iter()
            .map(|(q, _)| (*q).clone())
            .collect();
        let macro_by_system = all
            .iter()
            .map(|(name, report)| {
                let v = (!queries.is_empty()).then(|| {
                    queries
                        .iter()
                        .map(|q| metric.of(&report.per_query[q]))
                        .sum::<f64>()
                        / queries.len() as f64
                });
                (name.to_string(), v)
            })
            .collect();
        bins.push(DifficultyBin {
            lower_pct: lower,
            upper_pct: upper,
            queries,
            macro_by_system,
        });
        lower = upper;
    }
    Ok(DifficultyBins {
        metric,
        edges: edges.to_vec(),
        bins,
    })
}

/// Movement of judged-relevant documents between two rankings, per grade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeShift {
    pub n_docs: usize,
    pub mean_rank_before: f64,
    pub mean_rank_after: f64,
    /// Counts in the "after" ranking.
    pub top10_count: usize,
    pub top50_count: usize,
    pub beyond100_count: usize,
}

/// Rank statistics of relevant documents (grade ≥ 1) before and after
/// re-ranking. A document missing from a ranking gets rank `len + 1`.
pub fn rank_shift_report(
    before: &Rankings,
    after: &Rankings,
    qrels: &Qrels,
) -> BTreeMap<u32, GradeShift> {
    #[derive(Default)]
    struct Acc {
        n: usize,
        before: f64,
        after: f64,
        top10: usize,
        top50: usize,
        beyond100: usize,
    }
    let positions = |r: Option<&Vec<(String, f64)>>| -> (HashMap<String, usize>, usize) {
        let list = r.map(Vec::as_slice).unwrap_or_default();
        let map = list
            .iter()
            .enumerate()
            .map(|(i, (d, _))| (d.clone(), i + 1))
            .collect();
        (map, list.len() + 1)
    };
    let mut acc: BTreeMap<u32, Acc> = BTreeMap::new();
    for (qid, judged) in qrels.iter() {
        if !before.contains_key(qid) && !after.contains_key(qid) {
            continue;
        }
        let (pos_before, missing_before) = positions(before.get(qid));
        let (pos_after, missing_after) = positions(after.get(qid));
        for (doc, &grade) in judged {
            if grade == 0 {
                continue;
            }
            let rb = pos_before.get(doc).copied().unwrap_or(missing_before);
            let ra = pos_after.get(doc).copied().unwrap_or(missing_after);
            let a = acc.entry(grade).or_default();
            a.n += 1;
            a.before += rb as f64;
            a.after += ra as f64;
            a.top10 += usize::from(ra <= 10);
            a.top50 += usize::from(ra <= 50);
            a.beyond100 += usize::from(ra > 100);
        }
    }
    acc.into_iter()
        .map(|(grade, a)| {
            let n = a.n as f64;
            (
                grade,
                GradeShift {
                    n_docs: a.n,
                    mean_rank_before: a.before / n,
                    mean_rank_after: a.after / n,
                    top10_count: a.top10,
                    top50_count: a.top50,
                    beyond100_count: a.beyond100,
                },
            )
        })
        .collect()
}
