use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{QderError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Davies-Bouldin index; lower is better.
    pub dbi: f64,
    /// Mean silhouette; singletons contribute 0.
    pub silhouette: f64,
    /// Calinski-Harabasz index. Infinite when every cluster has zero scatter.
    pub calinski_harabasz: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn centroid(points: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; points[0].len()];
    for p in points {
        c.iter_mut().zip(*p).for_each(|(a, b)| *a += b);
    }
    let n = points.len() as f64;
    c.iter_mut().for_each(|a| *a /= n);
    c
}

/// Davies-Bouldin, silhouette and Calinski-Harabasz indices of a labelled
/// point set, with Euclidean distances.
pub fn clustering_metrics<P: AsRef<[f64]>, L: Ord>(
    points: &[P],
    labels: &[L],
) -> Result<ClusterReport> {
    if points.len() != labels.len() {
        return Err(QderError::Shape(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    if dim == 0 || points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(QderError::Shape(
            "points must share a positive dimension".into(),
        ));
    }
    if points
        .iter()
        .flat_map(|p| p.as_ref())
        .any(|v| !v.is_finite())
    {
        return Err(QderError::Numeric("non-finite coordinate".into()));
    }
    let mut groups: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let k = groups.len();
    if k < 2 {
        return Err(QderError::Invalid(
            "clustering metrics need at least two clusters".into(),
        ));
    }
    let members: Vec<Vec<&[f64]>> = groups
        .values()
        .map(|idx| idx.iter().map(|&i| points[i].as_ref()).collect())
        .collect();
    let cluster_of: Vec<usize> = {
        let mut c = vec![0; points.len()];
        for (ci, idx) in groups.values().enumerate() {
            for &i in idx {
                c[i] = ci;
            }
        }
        c
    };
    let centroids: Vec<Vec<f64>> = members.iter().map(|m| centroid(m)).collect();
    let scatter: Vec<f64> = members
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.iter().map(|p| dist(p, c)).sum::<f64>() / m.len() as f64)
        .collect();

    let mut dbi = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in (0..k).filter(|&j| j != i) {
            let sep = dist(&centroids[i], &centroids[j]);
            if sep == 0.0 {
                return Err(QderError::Numeric("two clusters share a centroid".into()));
            }
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        dbi += worst;
    }
    dbi /= k as f64;

    let mut silhouette = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = cluster_of[i];
        if members[own].len() == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if j != i {
                sums[cluster_of[j]] += dist(p.as_ref(), q.as_ref());
            }
        }
        let a = sums[own] / (members[own].len() - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / members[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            silhouette += (b - a) / denom;
        }
    }
    silhouette /= points.len() as f64;

    let all: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
    let overall = centroid(&all);
    let sq = |a: &[f64], b: &[f64]| dist(a, b).powi(2);
    let between: f64 = members
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.len() as f64 * sq(c, &overall))
        .sum();
    let within: f64 = members
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.iter().map(|p| sq(p, c)).sum::<f64>())
        .sum();
    let n = points.len() as f64;
    let calinski_harabasz = if within == 0.0 {
        f64::INFINITY
    } else {
        (between / (k as f64 - 1.0)) / (within / (n - k as f64))
    };

    Ok(ClusterReport {
        dbi,
        silhouette,
        calinski_harabasz,
    })
}
