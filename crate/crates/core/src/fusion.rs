//! Product-of-Experts fusion in logit space: `α·S_geom + β·S_struct`.

use ndarray::Zip;

use crate::config::{CalibConfig, CslsMode};
use crate::error::{Error, Result};
use crate::geom::{adaptive_csls, fixed_csls};
use crate::structural::{build_struct_logits, StructEvidence};
use crate::types::{SimMatrix, Stage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoEWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl PoEWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0) || !(alpha + beta).is_finite() {
            return Err(Error::InvalidConfig(format!(
                "fusion weights need alpha, beta >= 0 and alpha + beta > 0, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn from_config(cfg: &CalibConfig) -> Result<Self> {
        Self::new(cfg.poe_alpha, cfg.poe_beta)
    }
}

pub fn poe_fuse(s_geom: &SimMatrix, s_struct: &SimMatrix, w: PoEWeights) -> Result<SimMatrix> {
    s_geom.expect_stage(Stage::Geom)?;
    s_struct.expect_stage(Stage::Struct)?;
    if s_geom.shape() != s_struct.shape() {
        return Err(Error::ShapeMismatch {
            left: s_geom.shape(),
            right: s_struct.shape(),
        });
    }
    let fused = Zip::from(&s_geom.scores)
        .and(&s_struct.scores)
        .map_collect(|&g, &s| w.alpha * g + w.beta * s);
    Ok(s_geom.derive(fused, Stage::Final))
}

/// Geometric expert for the configured CSLS mode.
pub fn geometric_expert(s_new: &SimMatrix, cfg: &CalibConfig) -> Result<SimMatrix> {
    s_new.expect_stage(Stage::New)?;
    match cfg.csls_mode {
        CslsMode::Off => s_new.clone().advance(Stage::Geom),
        CslsMode::Fixed => fixed_csls(s_new, cfg.k_fixed),
        CslsMode::Adaptive => adaptive_csls(s_new, cfg),
    }
}

/// Every intermediate of one calibration run.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub geom: SimMatrix,
    pub structural: Option<(SimMatrix, StructEvidence)>,
    pub final_scores: SimMatrix,
}

pub fn calibrate_detailed(s_new: &SimMatrix, cfg: &CalibConfig) -> Result<Calibrated> {
    let geom = geometric_expert(s_new, cfg)?;
    if !cfg.struct_poe {
        let final_scores = geom.clone().advance(Stage::Final)?;
        return Ok(Calibrated {
            geom,
            structural: None,
            final_scores,
        });
    }
    let (logits, evidence) = build_struct_logits(s_new, cfg)?;
    let final_scores = poe_fuse(&geom, &logits, PoEWeights::from_config(cfg)?)?;
    Ok(Calibrated {
        geom,
        structural: Some((logits, evidence)),
        final_scores,
    })
}

/// The calibration operator `S_new ↦ S_final`.
pub fn calibrate(s_new: &SimMatrix, cfg: &CalibConfig) -> Result<SimMatrix> {
    calibrate_detailed(s_new, cfg).map(|c| c.final_scores)
}
