//! Temperature-scaled cosine scoring and the optional global z-score that
//! together produce the pre-CSLS matrix `S_new`.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{SimMatrix, Stage};

const UNIT_NORM_TOL: f64 = 1e-6;

/// Scalar mean and standard deviation of a score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mu: f64,
    pub sigma: f64,
    pub source: String,
}

fn check_unit_rows(m: ArrayView2<f64>) -> Result<()> {
    for (row, r) in m.axis_iter(Axis(0)).enumerate() {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    Ok(())
}

/// `(logit_scale / tau) · ⟨z_q, v_c⟩` for unit-norm rows.
///
/// Each dot product is accumulated in coordinate order, so a row's scores do
/// not depend on how rows are split across workers.
pub fn base_similarity(
    queries_norm: ArrayView2<f64>,
    candidates_norm: ArrayView2<f64>,
    logit_scale: f64,
    tau: f64,
) -> Result<SimMatrix> {
    if queries_norm.ncols() != candidates_norm.ncols() {
        return Err(Error::DimMismatch {
            expected: queries_norm.ncols(),
            found: candidates_norm.ncols(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    check_unit_rows(queries_norm)?;
    check_unit_rows(candidates_norm)?;
    let scale = logit_scale / tau;
    let mut scores = Array2::zeros((queries_norm.nrows(), candidates_norm.nrows()));
    scores
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(queries_norm.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut out, z)| {
            for (o, v) in out.iter_mut().zip(candidates_norm.rows()) {
                let mut acc = 0.0;
                for (a, b) in z.iter().zip(v.iter()) {
                    acc += a * b;
                }
                *o = scale * acc;
            }
        });
    Ok(SimMatrix::new(scores, Stage::Base))
}

/// Population mean and standard deviation over every entry.
pub fn zscore_fit(s: &SimMatrix, source: &str) -> Result<ZScoreStats> {
    let n = s.scores.len();
    if n == 0 {
        return Err(Error::ConstantMatrix);
    }
    let mu = s.scores.iter().sum::<f64>() / n as f64;
    let var = s.scores.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(Error::ConstantMatrix);
    }
    Ok(ZScoreStats {
        mu,
        sigma,
        source: source.to_string(),
    })
}

/// Promotes `S_base` to `S_new`, z-scoring when statistics are supplied.
pub fn make_snew(s_base: SimMatrix, stats: Option<&ZScoreStats>) -> Result<SimMatrix> {
    s_base.expect_stage(Stage::Base)?;
    let mut s = s_base.advance(Stage::New)?;
    if let Some(st) = stats {
        s.scores.mapv_inplace(|v| (v - st.mu) / st.sigma);
    }
    Ok(s)
}
