use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QderError, Result};

/// Query roles for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_queries: Vec<String>,
    pub validation_queries: Vec<String>,
    pub test_queries: Vec<String>,
}

/// Shuffle the queries with `seed` and cut them into `k` test parts whose
/// sizes differ by at most one (the first `n mod k` parts get the extra
/// query).
///
/// For `k ≥ 3` fold `i` validates on part `i + 1 (mod k)` and trains on the
/// rest. With `k = 2` the single remaining part is halved into validation
/// and training; when it holds one query there is no validation set and the
/// trainer selects checkpoints on its training queries.
pub fn make_folds(query_ids: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let mut ids: Vec<String> = query_ids.to_vec();
    ids.sort();
    ids.dedup();
    if k < 2 {
        return Err(QderError::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > ids.len() {
        return Err(QderError::Config(format!(
            "{k} folds requested for {} queries",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let mut parts: Vec<Vec<String>> = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = n / k + usize::from(i < n % k);
        parts.push(ids[start..start + size].to_vec());
        start += size;
    }

    let folds = (0..k)
        .map(|i| {
            let test_queries = parts[i].clone();
            let (train_queries, validation_queries) = if k == 2 {
                let other = &parts[1 - i];
                let n_val = other.len() / 2;
                (other[n_val..].to_vec(), other[..n_val].to_vec())
            } else {
                let v = (i + 1) % k;
                let train = (0..k)
                    .filter(|&j| j != i && j != v)
                    .flat_map(|j| parts[j].iter().cloned())
                    .collect();
                (train, parts[v].clone())
            };
            FoldSplit {
                fold_id: i,
                train_queries,
                validation_queries,
                test_queries,
            }
        })
        .collect();
    Ok(folds)
}
