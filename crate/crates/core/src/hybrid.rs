//! Fusion of a first-stage run with model scores: per-query min-max
//! normalization followed by linear interpolation, with the weight chosen by
//! a grid search on MAP.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{sort_ranking, Qrels, Rankings};
use crate::error::{QderError, Result};
use crate::evaluation::{evaluate, DEFAULT_CUTOFF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Minmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridConfig {
    /// Weight of the first run; `1 - lambda` goes to the second.
    pub lambda: f64,
    pub grid_step: f64,
    pub normalization: Normalization,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            lambda: 0.5,
            grid_step: 0.01,
            normalization: Normalization::Minmax,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(QderError::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.5) {
            return Err(QderError::Config(format!(
                "grid_step {} outside (0, 0.5]",
                self.grid_step
            )));
        }
        Ok(())
    }

    /// λ values from 0 to 1 inclusive. The last point is exactly 1 even when
    /// the step does not divide the interval.
    pub fn grid(&self) -> Vec<f64> {
        let n = (1.0 / self.grid_step + 1e-9).floor() as usize;
        let mut grid: Vec<f64> = (0..=n)
            .map(|i| (i as f64 * self.grid_step).min(1.0))
            .collect();
        if grid.last().is_some_and(|&l| l < 1.0 - 1e-12) {
            grid.push(1.0);
        } else if let Some(last) = grid.last_mut() {
            *last = 1.0;
        }
        grid
    }
}

/// Map each query's scores to [0, 1]. A query whose scores are all equal
/// maps to 0.5 throughout. List order is kept.
pub fn normalize_per_query(rankings: &Rankings) -> Rankings {
    rankings
        .iter()
        .map(|(q, list)| {
            let lo = list.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
            let hi = list
                .iter()
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            let scaled = list
                .iter()
                .map(|(d, s)| {
                    let v = if span > 0.0 { (s - lo) / span } else { 0.5 };
                    (d.clone(), v)
                })
                .collect();
            (q.clone(), scaled)
        })
        .collect()
}

/// `lambda · a + (1 − lambda) · b` per document, re-sorted. Inputs should
/// already be normalized. A document missing from one run scores 0 there.
pub fn interpolate(a: &Rankings, b: &Rankings, lambda: f64) -> Result<Rankings> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(QderError::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let queries: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    if !a.is_empty() && !b.is_empty() && !a.keys().any(|q| b.contains_key(q)) {
        return Err(QderError::Invalid("runs share no query".into()));
    }
    let mut fused = Rankings::new();
    for q in queries {
        let mut scores: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for (d, s) in a.get(q).into_iter().flatten() {
            scores.entry(d).or_default().0 = *s;
        }
        for (d, s) in b.get(q).into_iter().flatten() {
            scores.entry(d).or_default().1 = *s;
        }
        let mut list: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(d, (x, y))| (d.to_string(), lambda * x + (1.0 - lambda) * y))
            .collect();
        sort_ranking(&mut list);
        fused.insert(q.clone(), list);
    }
    Ok(fused)
}

/// Normalize both runs, then interpolate.
pub fn fuse(a: &Rankings, b: &Rankings, lambda: f64) -> Result<Rankings> {
    interpolate(&normalize_per_query(a), &normalize_per_query(b), lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub map: f64,
    /// `(lambda, MAP)` at every grid point.
    pub curve: Vec<(f64, f64)>,
}

impl LambdaFit {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "lambda,map")?;
        for (l, m) in &self.curve {
            writeln!(w, "{l:?},{m:?}")?;
        }
        w.flush()
    }
}

/// Grid search for the λ maximizing MAP of the fused run. Ties go to the
/// smallest λ.
pub fn fit_lambda(
    a: &Rankings,
    b: &Rankings,
    qrels: &Qrels,
    cfg: &HybridConfig,
) -> Result<LambdaFit> {
    cfg.validate()?;
    let grid = cfg.grid();
    if grid.is_empty() {
        return Err(QderError::Empty("lambda grid".into()));
    }
    let (na, nb) = (normalize_per_query(a), normalize_per_query(b));
    let maps = grid
        .par_iter()
        .map(|&l| Ok(evaluate(&interpolate(&na, &nb, l)?, qrels, DEFAULT_CUTOFF).map()))
        .collect::<Result<Vec<f64>>>()?;
    let curve: Vec<(f64, f64)> = grid.into_iter().zip(maps).collect();
    let (lambda, map) =
        curve
            .iter()
            .copied()
            .fold((f64::NAN, f64::NEG_INFINITY), |best, (l, m)| {
                if m > best.1 {
                    (l, m)
                } else {
                    best
                }
            });
    Ok(LambdaFit { lambda, map, curve })
}

#[derive(Debug, Clone)]
pub struct CrossFitFusion {
    pub rankings: Rankings,
    /// λ fit per fold on the queries outside that fold.
    pub fits: BTreeMap<usize, LambdaFit>,
}

/// Fit λ for each fold on the other folds' queries and fuse that fold's
/// queries with it. `assignment` maps query id to its test fold.
pub fn cross_fit_fusion(
    a: &Rankings,
    b: &Rankings,
    qrels: &Qrels,
    assignment: &BTreeMap<String, usize>,
    cfg: &HybridConfig,
) -> Result<CrossFitFusion> {
    let folds: BTreeSet<usize> = assignment.values().copied().collect();
    let subset = |r: &Rankings, keep: &dyn Fn(usize) -> bool| -> Rankings {
        r.iter()
            .filter(|(q, _)| assignment.get(*q).is_some_and(|&f| keep(f)))
            .map(|(q, l)| (q.clone(), l.clone()))
            .collect()
    };
    let mut rankings = Rankings::new();
    let mut fits = BTreeMap::new();
    for &fold in &folds {
        let train_ids: Vec<&String> = assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(q, _)| q)
            .collect();
        if train_ids.is_empty() {
            return Err(QderError::Empty(format!(
                "no training queries outside fold {fold}"
            )));
        }
        let fit = fit_lambda(
            &subset(a, &|f| f != fold),
            &subset(b, &|f| f != fold),
            &qrels.restrict(train_ids),
            cfg,
        )?;
        let fused = fuse(
            &subset(a, &|f| f == fold),
            &subset(b, &|f| f == fold),
            fit.lambda,
        )?;
        rankings.extend(fused);
        fits.insert(fold, fit);
    }
    Ok(CrossFitFusion { rankings, fits })
}
