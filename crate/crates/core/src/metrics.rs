//! Retrieval accuracy, per-class recall and hubness diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::{count_within_top_k, rank_of, row_ranks};
use crate::types::SimMatrix;

/// Column index of each query's true class.
fn label_columns(s: &SimMatrix, labels: Option<&[usize]>) -> Result<Vec<usize>> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    if labels.len() != s.n_queries() {
        return Err(Error::MissingLabels);
    }
    let col_of = s.column_of_class();
    labels
        .iter()
        .enumerate()
        .map(|(query, label)| {
            col_of.get(label).copied().ok_or(Error::LabelOutOfRange {
                query,
                label: *label,
            })
        })
        .collect()
}

fn check_k(s: &SimMatrix, k: usize) -> Result<()> {
    let c = s.n_classes();
    if k == 0 || k > c {
        return Err(Error::BadK { k, max: c });
    }
    Ok(())
}

/// 1-based rank of each query's true class.
pub fn true_class_ranks(s: &SimMatrix, labels: Option<&[usize]>) -> Result<Vec<usize>> {
    let cols = label_columns(s, labels)?;
    Ok(s.scores
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(cols.par_iter())
        .map(|(row, &col)| rank_of(row, col))
        .collect())
}

/// Fraction of queries whose true class is within their top `k`.
pub fn top_k_accuracy(s: &SimMatrix, labels: Option<&[usize]>, k: usize) -> Result<f64> {
    check_k(s, k)?;
    let ranks = true_class_ranks(s, labels)?;
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len().max(1) as f64)
}

/// Recall@k of every class, indexed by class id. Classes without queries are
/// `None` and are excluded from aggregates.
pub fn recall_at_k_per_class(
    s: &SimMatrix,
    labels: Option<&[usize]>,
    k: usize,
) -> Result<Vec<Option<f64>>> {
    check_k(s, k)?;
    let ranks = true_class_ranks(s, labels)?;
    let labels = labels.ok_or(Error::MissingLabels)?;
    let n_ids = s.class_ids.iter().max().map_or(0, |&m| m + 1);
    let mut hits = vec![0usize; n_ids];
    let mut totals = vec![0usize; n_ids];
    for (&label, &rank) in labels.iter().zip(&ranks) {
        totals[label] += 1;
        if rank <= k {
            hits[label] += 1;
        }
    }
    Ok(hits
        .into_iter()
        .zip(totals)
        .map(|(h, t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

/// Mean over defined entries.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// `N_K(c)`: number of queries whose top-`k` contains column `c`.
pub fn popularity_histogram(s: &SimMatrix, k: usize) -> Result<Vec<usize>> {
    check_k(s, k)?;
    Ok(count_within_top_k(&row_ranks(&s.scores), k))
}

/// Population skewness of `N_K`; 0 for constant or single-entry input.
pub fn hubness_skew(n_k: &[usize]) -> f64 {
    let n = n_k.len();
    if n < 2 {
        return 0.0;
    }
    let mean = n_k.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let (m2, m3) = n_k.iter().fold((0.0, 0.0), |(m2, m3), &v| {
        let d = v as f64 - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    let (m2, m3) = (m2 / n as f64, m3 / n as f64);
    if m2 <= 0.0 {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

/// Evaluation of one score matrix.
///
/// Keys of `top_k_acc` and `per_class_recall` are cutoffs; keys of
/// `popularity_hist` and `hubness_skew` are `"<stage>@<K>"`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_queries: usize,
    pub n_classes: usize,
    pub top_k_acc: BTreeMap<usize, f64>,
    pub per_class_recall: BTreeMap<usize, Vec<Option<f64>>>,
    pub mean_class_recall: BTreeMap<usize, Option<f64>>,
    pub popularity_hist: BTreeMap<String, Vec<usize>>,
    pub hubness_skew: BTreeMap<String, f64>,
    pub per_subject_acc: BTreeMap<usize, BTreeMap<usize, f64>>,
}

impl EvalReport {
    /// Evaluates `s` at every cutoff in `ks`. Accuracy and recall need
    /// labels; popularity and skew are label-free and always present.
    pub fn evaluate(
        s: &SimMatrix,
        labels: Option<&[usize]>,
        subjects: Option<&[usize]>,
        ks: &[usize],
    ) -> Result<Self> {
        let mut report = EvalReport {
            n_queries: s.n_queries(),
            n_classes: s.n_classes(),
            ..Default::default()
        };
        for &k in ks {
            let hist = popularity_histogram(s, k)?;
            let key = format!("{}@{k}", s.stage.name());
            report.hubness_skew.insert(key.clone(), hubness_skew(&hist));
            report.popularity_hist.insert(key, hist);
        }
        let Some(labels) = labels else {
            return Ok(report);
        };
        let ranks = true_class_ranks(s, Some(labels))?;
        for &k in ks {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            report
                .top_k_acc
                .insert(k, hits as f64 / ranks.len().max(1) as f64);
            let recall = recall_at_k_per_class(s, Some(labels), k)?;
            report.mean_class_recall.insert(k, mean_defined(&recall));
            report.per_class_recall.insert(k, recall);
        }
        if let Some(subjects) = subjects {
            if subjects.len() != ranks.len() {
                return Err(Error::MetadataLength(format!(
                    "{} subject ids for {} queries",
                    subjects.len(),
                    ranks.len()
                )));
            }
            let mut per: BTreeMap<usize, (usize, BTreeMap<usize, usize>)> = BTreeMap::new();
            for (&subj, &r) in subjects.iter().zip(&ranks) {
                let entry = per.entry(subj).or_default();
                entry.0 += 1;
                for &k in ks {
                    *entry.1.entry(k).or_default() += usize::from(r <= k);
                }
            }
            report.per_subject_acc = per
                .into_iter()
                .map(|(subj, (n, hits))| {
                    let acc = hits
                        .into_iter()
                        .map(|(k, h)| (k, h as f64 / n as f64))
                        .collect();
                    (subj, acc)
                })
                .collect();
        }
        Ok(report)
    }

    /// Popularity histograms as CSV: one row per class, one column per key.
    pub fn popularity_csv(&self) -> String {
        let mut out = String::from("class");
        for key in self.popularity_hist.keys() {
            out.push(',');
            out.push_str(key);
        }
        out.push('\n');
        for c in 0..self.n_classes {
            let _ = write!(out, "{c}");
            for hist in self.popularity_hist.values() {
                let _ = write!(out, ",{}", hist[c]);
            }
            out.push('\n');
        }
        out
    }
}

/// Per-class `recall_b − recall_a` at cutoff `k` and its mean over classes
/// defined in both reports.
pub fn delta_recall(
    a: &EvalReport,
    b: &EvalReport,
    k: usize,
) -> Result<(Vec<Option<f64>>, Option<f64>)> {
    let ra = a
        .per_class_recall
        .get(&k)
        .ok_or_else(|| Error::ClassSetMismatch(format!("first report lacks K={k}")))?;
    let rb = b
        .per_class_recall
        .get(&k)
        .ok_or_else(|| Error::ClassSetMismatch(format!("second report lacks K={k}")))?;
    if ra.len() != rb.len() {
        return Err(Error::ClassSetMismatch(format!(
            "{} vs {} classes",
            ra.len(),
            rb.len()
        )));
    }
    let delta: Vec<Option<f64>> = ra
        .iter()
        .zip(rb)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        })
        .collect();
    let mean = mean_defined(&delta);
    Ok((delta, mean))
}
