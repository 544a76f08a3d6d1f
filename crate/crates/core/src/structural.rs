//! Structural expert built from rank evidence in `S_new`.
//!
//! Mutual nearest neighbors and bidirectional top-L pairs become anchors that
//! receive a constant bonus; pairs that look like hub intrusions (outside the
//! row top-K, inside the column top-L, popular class) receive a penalty
//! proportional to the class hubness score. Anchors are never penalized.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::CalibConfig;
use crate::error::{Error, Result};
use crate::rank::{count_within_top_k, order_desc, row_ranks};
use crate::types::{SimMatrix, Stage};

pub type Pair = (usize, usize);

/// Strict 1-based ranks under the (score desc, index asc) order.
///
/// `r_row[[q, c]]` is the rank of class `c` within row `q`;
/// `r_col[[q, c]]` is the rank of query `q` within column `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTables {
    pub r_row: Array2<usize>,
    pub r_col: Array2<usize>,
}

impl RankTables {
    pub fn shape(&self) -> (usize, usize) {
        self.r_row.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructEvidence {
    pub anchors: BTreeSet<Pair>,
    pub hubs: BTreeSet<Pair>,
    pub popularity: Vec<usize>,
    pub hub_score: Vec<f64>,
    pub mnn_count: usize,
}

/// Summary of [`StructEvidence`] written by `diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub n_queries: usize,
    pub n_classes: usize,
    pub mnn_count: usize,
    pub anchor_count: usize,
    pub hub_count: usize,
    pub k_pop: usize,
    pub top_l: usize,
    /// Per-class popularity ρ(c).
    pub popularity: Vec<usize>,
    /// Number of classes at each popularity value.
    pub popularity_histogram: BTreeMap<usize, usize>,
    pub hub_score: Vec<f64>,
}

impl StructEvidence {
    pub fn report(&self, n_queries: usize, cfg: &CalibConfig) -> EvidenceReport {
        let mut popularity_histogram = BTreeMap::new();
        for &p in &self.popularity {
            *popularity_histogram.entry(p).or_insert(0) += 1;
        }
        EvidenceReport {
            n_queries,
            n_classes: self.popularity.len(),
            mnn_count: self.mnn_count,
            anchor_count: self.anchors.len(),
            hub_count: self.hubs.len(),
            k_pop: cfg.k_pop,
            top_l: cfg.top_l,
            popularity: self.popularity.clone(),
            popularity_histogram,
            hub_score: self.hub_score.clone(),
        }
    }
}

pub fn compute_ranks(s_new: &SimMatrix) -> Result<RankTables> {
    s_new.expect_stage(Stage::New)?;
    Ok(ranks_of(&s_new.scores))
}

/// Rank tables of an arbitrary score matrix, no stage check.
pub(crate) fn ranks_of(scores: &Array2<f64>) -> RankTables {
    let r_row = row_ranks(scores);
    let mut r_col = Array2::zeros(scores.raw_dim());
    r_col
        .axis_iter_mut(Axis(1))
        .into_par_iter()
        .zip(scores.axis_iter(Axis(1)).into_par_iter())
        .for_each(|(mut out, col)| {
            for (rank, q) in order_desc(col).into_iter().enumerate() {
                out[q] = rank + 1;
            }
        });
    RankTables { r_row, r_col }
}

/// Pairs that rank each other first.
pub fn mnn_pairs(ranks: &RankTables) -> BTreeSet<Pair> {
    bidirectional_top_l(ranks, 1)
}

/// Pairs that rank each other within the top `l`.
pub fn bidirectional_top_l(ranks: &RankTables, l: usize) -> BTreeSet<Pair> {
    ranks
        .r_row
        .indexed_iter()
        .filter(|&((q, c), &rr)| rr <= l && ranks.r_col[[q, c]] <= l)
        .map(|(p, _)| p)
        .collect()
}

/// Number of queries whose row top-`k_pop` contains each class.
pub fn popularity(ranks: &RankTables, k_pop: usize) -> Vec<usize> {
    count_within_top_k(&ranks.r_row, k_pop)
}

/// Min-max scaled popularity; all zeros when popularity is constant.
pub fn hub_score(popularity: &[usize]) -> Vec<f64> {
    let lo = popularity.iter().copied().min().unwrap_or(0);
    let hi = popularity.iter().copied().max().unwrap_or(0);
    if hi == lo {
        return vec![0.0; popularity.len()];
    }
    let span = (hi - lo) as f64;
    popularity.iter().map(|&p| (p - lo) as f64 / span).collect()
}

/// Structural logit matrix and the evidence it was built from.
pub fn build_struct_logits(
    s_new: &SimMatrix,
    cfg: &CalibConfig,
) -> Result<(SimMatrix, StructEvidence)> {
    s_new.expect_stage(Stage::New)?;
    cfg.validate_scalars()?;
    let (nq, c) = s_new.shape();
    if cfg.top_l > c || cfg.k_pop > c {
        return Err(Error::InvalidConfig(format!(
            "top_l={} and k_pop={} must not exceed C={c}",
            cfg.top_l, cfg.k_pop
        )));
    }
    let ranks = compute_ranks(s_new)?;
    let mnn = mnn_pairs(&ranks);
    let mut anchors = bidirectional_top_l(&ranks, cfg.top_l);
    anchors.extend(mnn.iter().copied());
    let pop = popularity(&ranks, cfg.k_pop);
    let h = hub_score(&pop);

    let mut hubs = BTreeSet::new();
    let mut logits = Array2::zeros((nq, c));
    for q in 0..nq {
        for j in 0..c {
            if anchors.contains(&(q, j)) {
                logits[[q, j]] = cfg.lam_anchor;
            } else if ranks.r_row[[q, j]] > cfg.k_pop
                && ranks.r_col[[q, j]] <= cfg.top_l
                && h[j] >= cfg.h_thr
            {
                hubs.insert((q, j));
                logits[[q, j]] = -cfg.lam_pen * h[j];
            }
        }
    }
    let evidence = StructEvidence {
        anchors,
        hubs,
        popularity: pop,
        hub_score: h,
        mnn_count: mnn.len(),
    };
    Ok((s_new.derive(logits, Stage::Struct), evidence))
}
