//! End-to-end path from raw embeddings to calibrated scores.
//!
//! Fitting ([`fit_models`]) and applying ([`score_new`]) are separate so the
//! whitening statistics can be estimated once on an unlabeled window and then
//! reused unchanged on later queries.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::config::CalibConfig;
use crate::error::{Error, Result};
use crate::fusion::{calibrate, calibrate_detailed, Calibrated};
use crate::similarity::{base_similarity, make_snew, zscore_fit, ZScoreStats};
use crate::types::{EmbeddingSet, Role, SimMatrix, Stage};
use crate::whitening::{
    apply, apply_per_subject, fit_with, l2_normalize, saw_fit_per_subject, Ridge, WhitenModel,
};

/// Whitening models fitted on unlabeled data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FittedModels {
    /// Per-subject query models; empty when SAW is disabled.
    pub saw: BTreeMap<usize, WhitenModel>,
    pub candidate: Option<WhitenModel>,
}

pub fn fit_candidate_model(
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
) -> Result<Option<WhitenModel>> {
    candidates.expect_role(Role::Candidate)?;
    if !cfg.cw {
        return Ok(None);
    }
    fit_with(candidates.vectors.view(), Ridge::from_config(cfg)).map(Some)
}

/// Fits SAW models on `queries` (labels are never read) and the candidate
/// model on `candidates`, as enabled by `cfg`.
pub fn fit_models(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
) -> Result<FittedModels> {
    queries.expect_role(Role::Query)?;
    let saw = if cfg.saw {
        saw_fit_per_subject(queries, Ridge::from_config(cfg))?
    } else {
        BTreeMap::new()
    };
    Ok(FittedModels {
        saw,
        candidate: fit_candidate_model(candidates, cfg)?,
    })
}

/// Unit-norm query embeddings after optional SAW.
pub fn prepare_queries(
    queries: &EmbeddingSet,
    models: &FittedModels,
    cfg: &CalibConfig,
) -> Result<Array2<f64>> {
    queries.expect_role(Role::Query)?;
    if cfg.saw {
        l2_normalize(apply_per_subject(queries, &models.saw)?.view())
    } else {
        l2_normalize(queries.vectors.view())
    }
}

/// Unit-norm candidate embeddings after optional global whitening.
pub fn prepare_candidates(
    candidates: &EmbeddingSet,
    models: &FittedModels,
    cfg: &CalibConfig,
) -> Result<Array2<f64>> {
    candidates.expect_role(Role::Candidate)?;
    match (&models.candidate, cfg.cw) {
        (Some(m), true) => l2_normalize(apply(m, candidates.vectors.view())?.view()),
        (None, true) => Err(Error::InvalidConfig(
            "candidate whitening enabled but no candidate model fitted".into(),
        )),
        (_, false) => l2_normalize(candidates.vectors.view()),
    }
}

/// `S_base` with query/class index maps attached.
pub fn score_base(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    models: &FittedModels,
    cfg: &CalibConfig,
) -> Result<SimMatrix> {
    if queries.dim() != candidates.dim() {
        return Err(Error::DimMismatch {
            expected: candidates.dim(),
            found: queries.dim(),
        });
    }
    let q = prepare_queries(queries, models, cfg)?;
    let c = prepare_candidates(candidates, models, cfg)?;
    base_similarity(q.view(), c.view(), cfg.logit_scale, cfg.tau)?
        .with_ids((0..queries.len()).collect(), candidates.class_ids())
}

/// Pre-CSLS matrix `S_new`. With `cfg.zscore` set, `zstats` must be given.
pub fn score_new(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    models: &FittedModels,
    cfg: &CalibConfig,
    zstats: Option<&ZScoreStats>,
) -> Result<SimMatrix> {
    let base = score_base(queries, candidates, models, cfg)?;
    match (cfg.zscore, zstats) {
        (true, None) => Err(Error::InvalidConfig(
            "zscore enabled but no statistics supplied".into(),
        )),
        (true, Some(st)) => make_snew(base, Some(st)),
        (false, _) => make_snew(base, None),
    }
}

/// Fits models on the inputs themselves and returns `S_new`. Z-score
/// statistics, when enabled, come from the same unlabeled `S_base`.
pub fn self_calibrated_snew(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
) -> Result<(SimMatrix, FittedModels)> {
    let models = fit_models(queries, candidates, cfg)?;
    let snew = if cfg.zscore {
        let base = score_base(queries, candidates, &models, cfg)?;
        let st = zscore_fit(&base, "query batch")?;
        make_snew(base, Some(&st))?
    } else {
        score_new(queries, candidates, &models, cfg, None)?
    };
    Ok((snew, models))
}

/// Full label-free run: fit, score, calibrate.
pub fn run(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
) -> Result<(SimMatrix, FittedModels)> {
    let (snew, models) = self_calibrated_snew(queries, candidates, cfg)?;
    Ok((calibrate(&snew, cfg)?, models))
}

/// Like [`run`] but keeps every intermediate.
pub fn run_detailed(
    queries: &EmbeddingSet,
    candidates: &EmbeddingSet,
    cfg: &CalibConfig,
) -> Result<(SimMatrix, Calibrated)> {
    let (snew, _) = self_calibrated_snew(queries, candidates, cfg)?;
    let cal = calibrate_detailed(&snew, cfg)?;
    debug_assert_eq!(cal.final_scores.stage, Stage::Final);
    Ok((snew, cal))
}
