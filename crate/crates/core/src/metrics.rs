//! Evaluation metrics: mean top-K score, pairwise diversity, diverse top-K.
//!
//! Similarity between sequences is the fraction of matching positions; between
//! grid points it is one minus the Euclidean distance over the grid diagonal.
//! Diversity is one minus the mean pairwise similarity.

use serde::{Deserialize, Serialize};

use crate::env::{Object, Space};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub x: Object,
    /// Target-fidelity score (higher is better).
    pub score: f64,
    pub acquisition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    Acquisition,
    Score,
}

/// Indices of the `k` best items by `select_by`, best first; ties keep input order.
pub fn topk_indices(items: &[ScoredItem], k: usize, select_by: SelectBy) -> Vec<usize> {
    let key = |i: usize| match select_by {
        SelectBy::Acquisition => items[i].acquisition,
        SelectBy::Score => items[i].score,
    };
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
    idx.truncate(k.min(items.len()));
    idx
}

/// Mean score of the top `k` items; `k` is clamped to the number of items.
pub fn mean_topk(items: &[ScoredItem], k: usize, select_by: SelectBy) -> Result<f64> {
    if items.is_empty() || k == 0 {
        return Err(Error::EmptySet);
    }
    let idx = topk_indices(items, k, select_by);
    Ok(idx.iter().map(|&i| items[i].score).sum::<f64>() / idx.len() as f64)
}

/// Similarity in `[0, 1]`: matching-position fraction for sequences,
/// `1 - distance / diagonal` for grids.
pub fn similarity(a: &[u16], b: &[u16], space: Space) -> f64 {
    match space {
        Space::Sequence { length, .. } => {
            let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
            same as f64 / length.max(1) as f64
        }
        Space::Grid { dims, side } => {
            let diag = ((side.saturating_sub(1) as f64).powi(2) * dims as f64).sqrt();
            if diag == 0.0 {
                return 1.0;
            }
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
            1.0 - d2.sqrt() / diag
        }
    }
}

/// One minus the mean pairwise similarity.
pub fn pairwise_diversity(objects: &[Object], space: Space) -> Result<f64> {
    let n = objects.len();
    if n < 2 {
        return Err(Error::TooFew { need: 2, got: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += similarity(&objects[i], &objects[j], space);
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((1.0 - total / pairs).clamp(0.0, 1.0))
}

/// Greedy top-K by score, skipping any item more similar than `threshold` to one already taken.
pub fn diverse_topk(items: &[ScoredItem], k: usize, threshold: f64, space: Space) -> Vec<ScoredItem> {
    let mut chosen: Vec<ScoredItem> = Vec::with_capacity(k);
    for i in topk_indices(items, items.len(), SelectBy::Score) {
        if chosen.len() == k {
            break;
        }
        let item = &items[i];
        if chosen.iter().all(|c| similarity(&c.x, &item.x, space) <= threshold) {
            chosen.push(item.clone());
        }
    }
    chosen
}
