//! Leave-one-subject-out evaluation and configuration sweeps.
//!
//! In every fold the held-out subject contributes unlabeled embeddings to
//! calibration (its own SAW statistics, optionally from a prefix window) and
//! labels only to the metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CalibConfig, CslsMode};
use crate::error::{Error, Result};
use crate::fusion::calibrate_detailed;
use crate::metrics::{delta_recall, EvalReport};
use crate::pipeline::{fit_candidate_model, score_base, score_new, FittedModels};
use crate::rank::rank_of;
use crate::similarity::{zscore_fit, ZScoreStats};
use crate::types::{EmbeddingSet, Role, SimMatrix};
use crate::whitening::{fit_with, saw_fit_per_subject, Ridge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    pub ks: Vec<usize>,
    /// Fit the held-out SAW model on only the first `window` rows.
    pub window: Option<usize>,
    /// Subjects reserved for tuning; they are never evaluated as test folds.
    pub dev_subjects: Vec<usize>,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 5, 10, 20],
            window: None,
            dev_subjects: Vec::new(),
        }
    }
}

/// Queries of one subject with subject ids reset to 0.
fn subject_block(queries: &EmbeddingSet, subject: usize) -> Result<EmbeddingSet> {
    queries.expect_role(Role::Query)?;
    let rows = queries.rows_of_subject(subject);
    if rows.is_empty() {
        return Err(Error::UnknownSubject(subject));
    }
    let mut block = queries.select_rows(&rows);
    block.subject_of = vec![0; block.len()];
    Ok(block)
}

/// Z-score statistics from the unlabeled base scores of the non-held-out
/// subjects, each whitened with its own SAW model. Falls back to the
/// held-out subject's own unlabeled scores when it is the only subject.
fn fold_zstats(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
    held_out: usize,
    held: &EmbeddingSet,
    models: &FittedModels,
) -> Result<ZScoreStats> {
    let others: Vec<usize> = (0..queries.len())
        .filter(|&i| queries.subject_of[i] != held_out)
        .collect();
    if others.is_empty() {
        let base = score_base(held, candidates, models, cfg)?;
        return zscore_fit(&base, "held-out subject (unlabeled)");
    }
    let mut rest = queries.select_rows(&others).without_labels();
    for s in rest.subject_of.iter_mut() {
        if *s > held_out {
            *s -= 1;
        }
    }
    let rest_models = FittedModels {
        saw: if cfg.saw {
            saw_fit_per_subject(&rest, Ridge::from_config(cfg))?
        } else {
            BTreeMap::new()
        },
        candidate: models.candidate.clone(),
    };
    let base = score_base(&rest, candidates, &rest_models, cfg)?;
    zscore_fit(&base, "non-held-out subjects (unlabeled)")
}

/// Calibrated `S_final` for one held-out subject. Labels are never read.
pub fn loso_scores(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
    held_out: usize,
    window: Option<usize>,
) -> Result<FoldScores> {
    let held = subject_block(queries, held_out)?.without_labels();
    let ridge = Ridge::from_config(cfg);
    let saw = if cfg.saw {
        let fit_rows = match window {
            Some(w) if w == 0 || w > held.len() => {
                return Err(Error::WindowTooLarge {
                    window: w,
                    available: held.len(),
                })
            }
            Some(w) => held.vectors.slice(ndarray::s![..w, ..]).to_owned(),
            None => held.vectors.clone(),
        };
        [(0, fit_with(fit_rows.view(), ridge)?)]
            .into_iter()
            .collect()
    } else {
        BTreeMap::new()
    };
    let models = FittedModels {
        saw,
        candidate: fit_candidate_model(candidates, cfg)?,
    };
    let zstats = if cfg.zscore {
        Some(fold_zstats(
            queries, candidates, cfg, held_out, &held, &models,
        )?)
    } else {
        None
    };
    let snew = score_new(&held, candidates, &models, cfg, zstats.as_ref())?;
    let cal = calibrate_detailed(&snew, cfg)?;
    let anchors = cal
        .structural
        .as_ref()
        .map(|(_, ev)| ev.anchors.iter().copied().collect())
        .unwrap_or_default();
    Ok(FoldScores {
        snew,
        final_scores: cal.final_scores,
        anchors,
    })
}

#[derive(Debug, Clone)]
pub struct FoldScores {
    pub snew: SimMatrix,
    pub final_scores: SimMatrix,
    pub anchors: Vec<(usize, usize)>,
}

/// Evaluation report for the held-out subject.
pub fn loso_evaluate(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
    held_out: usize,
    window: Option<usize>,
    ks: &[usize],
) -> Result<EvalReport> {
    let fold = loso_scores(queries, candidates, cfg, held_out, window)?;
    evaluate_fold(queries, held_out, &fold.final_scores, ks)
}

fn evaluate_fold(
    queries: &EmbeddingSet,
    held_out: usize,
    s: &SimMatrix,
    ks: &[usize],
) -> Result<EvalReport> {
    let labels = subject_block(queries, held_out)?
        .label_of
        .ok_or(Error::MissingLabels)?;
    let subjects = vec![held_out; labels.len()];
    EvalReport::evaluate(s, Some(&labels), Some(&subjects), ks)
}

/// Mean metrics over a set of folds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldSummary {
    pub folds: Vec<usize>,
    pub top_k_acc: BTreeMap<usize, f64>,
    pub mean_class_recall: BTreeMap<usize, f64>,
    /// Mean skew of `N_K` keyed by K.
    pub hubness_skew: BTreeMap<usize, f64>,
    pub reports: Vec<EvalReport>,
}

impl FoldSummary {
    fn from_reports(folds: Vec<usize>, reports: Vec<EvalReport>, ks: &[usize]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut s = FoldSummary {
            folds,
            ..Default::default()
        };
        for &k in ks {
            let acc = reports.iter().map(|r| r.top_k_acc[&k]).sum::<f64>() / n;
            s.top_k_acc.insert(k, acc);
            let rec = reports
                .iter()
                .map(|r| r.mean_class_recall[&k].unwrap_or(0.0))
                .sum::<f64>()
                / n;
            s.mean_class_recall.insert(k, rec);
            let skew = reports
                .iter()
                .map(|r| {
                    r.hubness_skew
                        .iter()
                        .find(|(key, _)| key.ends_with(&format!("@{k}")))
                        .map_or(0.0, |(_, v)| *v)
                })
                .sum::<f64>()
                / n;
            s.hubness_skew.insert(k, skew);
        }
        s.reports = reports;
        s
    }

    pub fn top(&self, k: usize) -> f64 {
        self.top_k_acc.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Test folds: every subject not reserved for development.
pub fn test_folds(queries: &EmbeddingSet, opts: &HarnessOptions) -> Vec<usize> {
    (0..queries.num_subjects())
        .filter(|s| !opts.dev_subjects.contains(s))
        .collect()
}

fn check_dev_subjects(queries: &EmbeddingSet, opts: &HarnessOptions) -> Result<()> {
    let n = queries.num_subjects();
    match opts.dev_subjects.iter().find(|&&s| s >= n) {
        Some(&s) => Err(Error::UnknownSubject(s)),
        None => Ok(()),
    }
}

/// Runs every fold in `folds` under `cfg`.
pub fn loso_summary(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
    folds: &[usize],
    opts: &HarnessOptions,
) -> Result<FoldSummary> {
    let reports = folds
        .par_iter()
        .map(|&s| loso_evaluate(queries, candidates, cfg, s, opts.window, &opts.ks))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldSummary::from_reports(folds.to_vec(), reports, &opts.ks))
}

/// The ordered ablation ladder from plain cosine to full calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rung {
    RawCosine,
    Saw,
    SawCw,
    FixedCsls,
    AdaCsls,
    Full,
}

impl Rung {
    pub const LADDER: [Rung; 6] = [
        Rung::RawCosine,
        Rung::Saw,
        Rung::SawCw,
        Rung::FixedCsls,
        Rung::AdaCsls,
        Rung::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rung::RawCosine => "raw-cosine",
            Rung::Saw => "+SAW",
            Rung::SawCw => "+SAW+CW",
            Rung::FixedCsls => "+SAW+CW+CSLS",
            Rung::AdaCsls => "+SAW+CW+Ada-CSLS",
            Rung::Full => "+SAW+CW+Ada-CSLS+PoE",
        }
    }

    /// `base` with this rung's stage toggles applied.
    pub fn config(self, base: &CalibConfig) -> CalibConfig {
        let (saw, cw, csls_mode, struct_poe) = match self {
            Rung::RawCosine => (false, false, CslsMode::Off, false),
            Rung::Saw => (true, false, CslsMode::Off, false),
            Rung::SawCw => (true, true, CslsMode::Off, false),
            Rung::FixedCsls => (true, true, CslsMode::Fixed, false),
            Rung::AdaCsls => (true, true, CslsMode::Adaptive, false),
            Rung::Full => (true, true, CslsMode::Adaptive, true),
        };
        CalibConfig {
            saw,
            cw,
            csls_mode,
            struct_poe,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub rung: Rung,
    pub name: String,
    pub summary: FoldSummary,
    /// Mean over folds and classes of per-class recall gain over `+SAW`.
    pub delta_recall_vs_saw: BTreeMap<usize, f64>,
}

/// Evaluates every rung of the ladder over the test folds.
pub fn run_pipeline_sweep(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    base: &CalibConfig,
    opts: &HarnessOptions,
) -> Result<Vec<StageRow>> {
    check_dev_subjects(queries, opts)?;
    let folds = test_folds(queries, opts);
    let summaries = Rung::LADDER
        .iter()
        .map(|r| loso_summary(queries, candidates, &r.config(base), &folds, opts))
        .collect::<Result<Vec<_>>>()?;
    let saw = &summaries[1];
    Rung::LADDER
        .iter()
        .zip(summaries.iter())
        .map(|(&rung, summary)| {
            let mut delta = BTreeMap::new();
            for &k in &opts.ks {
                let mut total = 0.0;
                for (a, b) in saw.reports.iter().zip(&summary.reports) {
                    total += delta_recall(a, b, k)?.1.unwrap_or(0.0);
                }
                delta.insert(k, total / summary.reports.len().max(1) as f64);
            }
            Ok(StageRow {
                rung,
                name: rung.name().to_string(),
                summary: summary.clone(),
                delta_recall_vs_saw: delta,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub summary: FoldSummary,
    /// Mean rank, in `S_final`, of the class of every structural anchor pair.
    pub mean_anchor_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweep {
    pub rows: Vec<BetaRow>,
    /// β with the best mean Top-5 on the development folds, if any were given.
    pub selected_beta: Option<f64>,
}

fn beta_row(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
    folds: &[usize],
    opts: &HarnessOptions,
) -> Result<BetaRow> {
    let per_fold = folds
        .par_iter()
        .map(|&s| {
            let fold = loso_scores(queries, candidates, cfg, s, opts.window)?;
            let report = evaluate_fold(queries, s, &fold.final_scores, &opts.ks)?;
            let rank_sum: usize = fold
                .anchors
                .iter()
                .map(|&(q, c)| rank_of(fold.final_scores.scores.index_axis(Axis(0), q), c))
                .sum();
            Ok((report, rank_sum, fold.anchors.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ranks, count) = per_fold
        .iter()
        .fold((0usize, 0usize), |(r, n), f| (r + f.1, n + f.2));
    let reports = per_fold.into_iter().map(|f| f.0).collect();
    Ok(BetaRow {
        beta: cfg.poe_beta,
        summary: FoldSummary::from_reports(folds.to_vec(), reports, &opts.ks),
        mean_anchor_rank: if count == 0 {
            0.0
        } else {
            ranks as f64 / count as f64
        },
    })
}

/// Full calibration at every β in `betas` (α fixed from `cfg`).
pub fn sweep_beta(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
    betas: &[f64],
    opts: &HarnessOptions,
) -> Result<BetaSweep> {
    if betas.is_empty() {
        return Err(Error::InvalidConfig("beta grid is empty".into()));
    }
    check_dev_subjects(queries, opts)?;
    let folds = test_folds(queries, opts);
    let grid_cfg = |beta: f64| CalibConfig {
        poe_beta: beta,
        struct_poe: true,
        ..cfg.clone()
    };
    let rows = betas
        .iter()
        .map(|&b| beta_row(queries, candidates, &grid_cfg(b), &folds, opts))
        .collect::<Result<Vec<_>>>()?;
    let selected_beta = if opts.dev_subjects.is_empty() {
        None
    } else {
        let mut best: Option<(f64, f64)> = None;
        for &b in betas {
            let dev = loso_summary(queries, candidates, &grid_cfg(b), &opts.dev_subjects, opts)?;
            let score = dev
                .top_k_acc
                .get(&5)
                .or(dev.top_k_acc.values().last())
                .copied()
                .unwrap_or(0.0);
            match best {
                Some((s, bb)) if s > score || (s == score && bb <= b) => {}
                _ => best = Some((score, b)),
            }
        }
        best.map(|(_, b)| b)
    };
    Ok(BetaSweep {
        rows,
        selected_beta,
    })
}

fn fmt_pct(v: Option<&f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Plain-text table of a stage sweep.
pub fn render_stage_table(rows: &[StageRow]) -> String {
    let mut out = format!(
        "{:<24} {:>8} {:>8} {:>10} {:>12}\n",
        "config", "top1%", "top5%", "skew(N5)", "dRecall@5"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>10.3} {:>12}",
            r.name,
            fmt_pct(r.summary.top_k_acc.get(&1)),
            fmt_pct(r.summary.top_k_acc.get(&5)),
            r.summary.hubness_skew.get(&5).copied().unwrap_or(f64::NAN),
            fmt_pct(r.delta_recall_vs_saw.get(&5)),
        );
    }
    out
}

/// Plain-text table of a β sweep.
pub fn render_beta_table(sweep: &BetaSweep) -> String {
    let mut out = format!(
        "{:>8} {:>8} {:>8} {:>10} {:>12}\n",
        "beta", "top1%", "top5%", "skew(N5)", "anchor-rank"
    );
    for r in &sweep.rows {
        let _ = writeln!(
            out,
            "{:>8.3} {:>8} {:>8} {:>10.3} {:>12.4}",
            r.beta,
            fmt_pct(r.summary.top_k_acc.get(&1)),
            fmt_pct(r.summary.top_k_acc.get(&5)),
            r.summary.hubness_skew.get(&5).copied().unwrap_or(f64::NAN),
            r.mean_anchor_rank,
        );
    }
    if let Some(b) = sweep.selected_beta {
        let _ = writeln!(out, "selected beta on dev subjects: {b}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn small() -> SynthSpec {
        SynthSpec {
            d: 16,
            n_classes: 40,
            n_subjects: 3,
            q_per_class_per_subject: 3,
            n_hub: 4,
            ..Default::default()
        }
    }

    fn cfg() -> CalibConfig {
        CalibConfig {
            k_max: 10,
            m_density: Some(30),
            ..Default::default()
        }
    }

    fn opts() -> HarnessOptions {
        HarnessOptions {
            ks: vec![1, 5, 10],
            ..Default::default()
        }
    }

    #[test]
    fn unknown_subject_and_window() {
        let d = generate(&small()).unwrap();
        assert!(matches!(
            loso_evaluate(&d.queries, &d.candidates, &cfg(), 7, None, &[1]),
            Err(Error::UnknownSubject(7))
        ));
        assert!(matches!(
            loso_evaluate(&d.queries, &d.candidates, &cfg(), 0, Some(121), &[1]),
            Err(Error::WindowTooLarge {
                window: 121,
                available: 120
            })
        ));
    }

    #[test]
    fn saturated_window_matches_full_fit() {
        let d = generate(&small()).unwrap();
        let full = loso_evaluate(&d.queries, &d.candidates, &cfg(), 1, None, &[1, 5]).unwrap();
        let win = loso_evaluate(&d.queries, &d.candidates, &cfg(), 1, Some(120), &[1, 5]).unwrap();
        assert_eq!(full, win);
    }

    #[test]
    fn noiseless_folds_are_perfect() {
        let d = generate(&small().noiseless()).unwrap();
        for s in 0..3 {
            let r = loso_evaluate(&d.queries, &d.candidates, &cfg(), s, None, &[1]).unwrap();
            assert_eq!(r.top_k_acc[&1], 1.0);
            assert_eq!(r.per_subject_acc[&s][&1], 1.0);
        }
    }

    #[test]
    fn zscore_fold_is_rank_preserving() {
        let d = generate(&small()).unwrap();
        let z = CalibConfig {
            zscore: true,
            csls_mode: CslsMode::Off,
            struct_poe: false,
            ..cfg()
        };
        let plain = CalibConfig {
            zscore: false,
            ..z.clone()
        };
        let a = loso_evaluate(&d.queries, &d.candidates, &z, 2, None, &[1, 5]).unwrap();
        let b = loso_evaluate(&d.queries, &d.candidates, &plain, 2, None, &[1, 5]).unwrap();
        assert_eq!(a.top_k_acc, b.top_k_acc);
    }

    #[test]
    fn stage_sweep_shape_and_baseline_identity() {
        let d = generate(&small()).unwrap();
        let rows = run_pipeline_sweep(&d.queries, &d.candidates, &cfg(), &opts()).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].name, "raw-cosine");
        let direct = loso_summary(
            &d.queries,
            &d.candidates,
            &Rung::RawCosine.config(&cfg()),
            &[0, 1, 2],
            &opts(),
        )
        .unwrap();
        assert_eq!(rows[0].summary, direct);
        assert!(rows[1].delta_recall_vs_saw.values().all(|&v| v == 0.0));
        let table = render_stage_table(&rows);
        assert_eq!(table.lines().count(), 7);
    }

    #[test]
    fn dev_subjects_are_excluded_from_test_folds() {
        let d = generate(&small()).unwrap();
        let o = HarnessOptions {
            dev_subjects: vec![1],
            ..opts()
        };
        assert_eq!(test_folds(&d.queries, &o), vec![0, 2]);
        let sweep = sweep_beta(&d.queries, &d.candidates, &cfg(), &[0.0, 1.9], &o).unwrap();
        assert_eq!(sweep.rows[0].summary.folds, vec![0, 2]);
        assert!(sweep.selected_beta.is_some());
        let bad = HarnessOptions {
            dev_subjects: vec![9],
            ..opts()
        };
        assert!(matches!(
            sweep_beta(&d.queries, &d.candidates, &cfg(), &[1.0], &bad),
            Err(Error::UnknownSubject(9))
        ));
    }

    #[test]
    fn beta_grid_rows() {
        let d = generate(&small()).unwrap();
        let sweep =
            sweep_beta(&d.queries, &d.candidates, &cfg(), &[0.0, 1.0, 1.0], &opts()).unwrap();
        assert_eq!(sweep.rows[1].summary, sweep.rows[2].summary);
        let ada = loso_summary(
            &d.queries,
            &d.candidates,
            &Rung::AdaCsls.config(&cfg()),
            &[0, 1, 2],
            &opts(),
        )
        .unwrap();
        assert_eq!(sweep.rows[0].summary, ada);
        assert!(sweep_beta(&d.queries, &d.candidates, &cfg(), &[], &opts()).is_err());
    }
}
