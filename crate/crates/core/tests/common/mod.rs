//! Test-only reference implementations and fixtures. Everything here is
//! written with plain loops over nested `Vec`s so it shares no code path with
//! the library's ndarray implementation.
#![allow(dead_code)]

use ndarray::Array2;
use qder::data_io::{EntitySet, TextRecord, TokenMatrix};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_mat(m: &Mat, cols: usize) -> Array2<f64> {
    let flat: Vec<f64> = m.iter().flatten().copied().collect();
    Array2::from_shape_vec((m.len(), cols), flat).unwrap()
}

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn record(id: &str, tok: &Mat, dt: usize, ent: &Mat, de: usize) -> TextRecord {
    TextRecord {
        id: id.to_string(),
        tokens: TokenMatrix::new(from_mat(tok, dt)),
        entities: EntitySet::new(
            (0..ent.len()).map(|i| format!("{id}-E{i}")).collect(),
            from_mat(ent, de),
        ),
    }
}

/// Softmax attention by direct per-entry evaluation.
pub fn naive_attend(q: &Mat, d: &Mat) -> (Mat, Mat) {
    let dim = q[0].len();
    let mut weights = Vec::new();
    let mut attended = Vec::new();
    for qi in q {
        let logits: Vec<f64> = d
            .iter()
            .map(|dj| (0..dim).map(|k| qi[k] * dj[k]).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let w: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let mut row = vec![0.0; dim];
        for (j, dj) in d.iter().enumerate() {
            for k in 0..dim {
                row[k] += w[j] * dj[k];
            }
        }
        weights.push(w);
        attended.push(row);
    }
    (weights, attended)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Op {
    Mul,
    Add,
    Sub,
}

/// Pooled features for one channel: for each op, mean over query rows of
/// op(q_i, attended_i). `ops` empty means [mean q; mean attended].
pub fn naive_channel(q: &Mat, d: &Mat, dim: usize, ops: &[Op]) -> Vec<f64> {
    let blocks = if ops.is_empty() { 2 } else { ops.len() };
    if q.is_empty() || d.is_empty() {
        return vec![0.0; blocks * dim];
    }
    let (_, att) = naive_attend(q, d);
    let r = q.len() as f64;
    let mut out = Vec::new();
    if ops.is_empty() {
        for src in [q, &att] {
            for k in 0..dim {
                out.push(src.iter().map(|row| row[k]).sum::<f64>() / r);
            }
        }
        return out;
    }
    for op in ops {
        for k in 0..dim {
            let mut acc = 0.0;
            for i in 0..q.len() {
                acc += match op {
                    Op::Mul => q[i][k] * att[i][k],
                    Op::Add => q[i][k] + att[i][k],
                    Op::Sub => q[i][k] - att[i][k],
                };
            }
            out.push(acc / r);
        }
    }
    out
}

#[derive(Clone)]
pub struct Pair {
    pub q_tok: Mat,
    pub d_tok: Mat,
    pub q_ent: Mat,
    pub d_ent: Mat,
    pub dt: usize,
    pub de: usize,
    pub s: f64,
}

impl Pair {
    pub fn random(
        rng: &mut impl Rng,
        (lq, ld, dt): (usize, usize, usize),
        (nq, nd, de): (usize, usize, usize),
    ) -> Pair {
        Pair {
            q_tok: random_mat(rng, lq, dt, 1.0),
            d_tok: random_mat(rng, ld, dt, 1.0),
            q_ent: random_mat(rng, nq, de, 1.0),
            d_ent: random_mat(rng, nd, de, 1.0),
            dt,
            de,
            s: rng.random_range(0.5..1.5),
        }
    }

    pub fn records(&self) -> (TextRecord, TextRecord) {
        (
            record("Q", &self.q_tok, self.dt, &self.q_ent, self.de),
            record("D", &self.d_tok, self.dt, &self.d_ent, self.de),
        )
    }

    /// Full feature vector, scaled by `s` when `scale` is set.
    pub fn features(&self, ops: &[Op], text: bool, entity: bool, scale: bool) -> Vec<f64> {
        let mut h = Vec::new();
        if text {
            h.extend(naive_channel(&self.q_tok, &self.d_tok, self.dt, ops));
        }
        if entity {
            h.extend(naive_channel(&self.q_ent, &self.d_ent, self.de, ops));
        }
        if scale {
            h.iter_mut().for_each(|x| *x *= self.s);
        }
        h
    }
}

pub fn naive_bilinear(h: &[f64], m: &Mat) -> f64 {
    let mut total = 0.0;
    for i in 0..h.len() {
        for j in 0..h.len() {
            total += h[i] * m[i][j] * h[j];
        }
    }
    total
}

/// Binary cross-entropy of a logit, written as -[y ln σ(x) + (1-y) ln(1-σ(x))]
/// with ln σ(x) = -ln(1 + e^{-x}).
pub fn naive_bce_logit(x: f64, y: f64) -> f64 {
    let log_sig = -(1.0 + (-x).exp()).ln();
    let log_one_minus = -(1.0 + x.exp()).ln();
    -(y * log_sig + (1.0 - y) * log_one_minus)
}

/// Relative error with a small absolute floor so that entries whose true
/// gradient is ~0 are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Brute-force references. Each recomputes its metric from scratch at every
/// rank without sharing state or helpers with the library.
pub mod brute {
    use std::collections::BTreeMap;

    pub fn ap(ranking: &[String], judged: &BTreeMap<String, u32>) -> Option<f64> {
        let r = judged.values().filter(|&&g| g >= 1).count();
        if r == 0 {
            return None;
        }
        let mut total = 0.0;
        for i in 0..ranking.len() {
            if judged.get(&ranking[i]).copied().unwrap_or(0) >= 1 {
                let hits = (0..=i)
                    .filter(|&j| judged.get(&ranking[j]).copied().unwrap_or(0) >= 1)
                    .count();
                total += hits as f64 / (i + 1) as f64;
            }
        }
        Some(total / r as f64)
    }

    pub fn ndcg(ranking: &[String], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
        let gain = |g: u32| g as f64;
        let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
        let dcg: f64 = (0..ranking.len().min(k))
            .map(|i| gain(judged.get(&ranking[i]).copied().unwrap_or(0)) * discount(i))
            .sum();
        let mut grades: Vec<u32> = judged.values().copied().collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = (0..grades.len().min(k))
            .map(|i| gain(grades[i]) * discount(i))
            .sum();
        if idcg == 0.0 {
            None
        } else {
            Some(dcg / idcg)
        }
    }

    pub fn precision(ranking: &[String], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
        let mut hits = 0;
        for i in 0..k {
            if i < ranking.len() && judged.get(&ranking[i]).copied().unwrap_or(0) >= 1 {
                hits += 1;
            }
        }
        hits as f64 / k as f64
    }

    pub fn rr(ranking: &[String], judged: &BTreeMap<String, u32>) -> f64 {
        for (i, d) in ranking.iter().enumerate() {
            if judged.get(d).copied().unwrap_or(0) >= 1 {
                return 1.0 / (i + 1) as f64;
            }
        }
        0.0
    }
}

/// A shuffled pool, a retrieved prefix, and random graded judgments.
pub fn random_instance(rng: &mut impl Rng) -> (Vec<String>, BTreeMap<String, u32>) {
    let pool = rng.random_range(5..40);
    let mut docs: Vec<String> = (0..pool).map(|i| format!("D{i}")).collect();
    docs.shuffle(rng);
    let retrieved = rng.random_range(0..=pool);
    let ranking = docs[..retrieved].to_vec();
    let mut judged = BTreeMap::new();
    for d in &docs {
        if rng.random_bool(0.5) {
            judged.insert(d.clone(), rng.random_range(0..=3));
        }
    }
    (ranking, judged)
}

pub fn brute_kendall(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tie_x += 1;
            }
            if dy == 0.0 {
                tie_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (conc - disc) as f64 / (((n0 - tie_x) * (n0 - tie_y)) as f64).sqrt()
}

pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (brute_ranks(x), brute_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if ties {
                rng.random_range(0..5) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect()
}
