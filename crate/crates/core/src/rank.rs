//! Deterministic ordering helpers shared by every module that ranks scores.
//!
//! The total order is: higher score first, ties broken by lower index.
//! Scores compare numerically, so `0.0` and `-0.0` tie.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

#[inline]
pub fn cmp_desc(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or_else(|| b.1.total_cmp(&a.1))
        .then(a.0.cmp(&b.0))
}

/// Indices of `values` in ranking order.
pub fn order_desc(values: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| cmp_desc((a, values[a]), (b, values[b])));
    idx
}

/// Values sorted from largest to smallest.
pub fn sorted_desc(values: ArrayView1<f64>) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Mean of the first `k` entries of a descending-sorted slice.
#[inline]
pub fn top_k_mean(sorted: &[f64], k: usize) -> f64 {
    sorted[..k].iter().sum::<f64>() / k as f64
}

/// 1-based rank of entry `target` within `values` under the total order.
pub fn rank_of(values: ArrayView1<f64>, target: usize) -> usize {
    let t = values[target];
    1 + values
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > t || (v == t && i < target))
        .count()
}

/// Row-wise 1-based ranks: `out[[q, c]]` is the rank of column `c` in row `q`.
pub fn row_ranks(scores: &Array2<f64>) -> Array2<usize> {
    let mut out = Array2::zeros(scores.raw_dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(scores.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut o, row)| {
            for (rank, c) in order_desc(row).into_iter().enumerate() {
                o[c] = rank + 1;
            }
        });
    out
}

/// Per column, the number of rows ranking it within the top `k`.
pub fn count_within_top_k(ranks: &Array2<usize>, k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; ranks.ncols()];
    for row in ranks.rows() {
        for (j, &r) in row.iter().enumerate() {
            if r <= k {
                counts[j] += 1;
            }
        }
    }
    counts
}
