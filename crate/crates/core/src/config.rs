//! Calibration hyperparameters.
//!
//! Every field has a default, so a JSON config only needs the fields it
//! changes. Unknown fields are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the geometric expert rescales `S_new`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CslsMode {
    /// The geometric expert is `S_new` itself.
    Off,
    /// CSLS with one neighborhood size `k_fixed` for every row and column.
    Fixed,
    /// Density-adaptive neighborhood sizes in `[k_min, k_max]`.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    /// Absolute whitening ridge. `None` selects `lambda_rel * trace(Σ) / d`
    /// per fitted model, floored at [`MIN_LAMBDA`].
    pub lambda_reg: Option<f64>,
    /// At 1.0 the ridge equals the mean eigenvalue, so no direction is
    /// scaled up by more than plain isotropic standardization would, even
    /// when the fit window has fewer rows than dimensions.
    pub lambda_rel: f64,
    pub tau: f64,
    /// Contrastive logit scale of the frozen encoders.
    pub logit_scale: f64,
    /// Global z-score of `S_base` using statistics from unlabeled data.
    pub zscore: bool,
    /// Top-m cutoff for row densities. `None` selects `min(50, C)`.
    pub m_density: Option<usize>,
    pub k_min: usize,
    /// Upper neighborhood bound; also the top-K cutoff for column densities.
    pub k_max: usize,
    pub k_fixed: usize,
    /// Bidirectional top-L bound for anchors and hub support.
    pub top_l: usize,
    /// Row top-K cutoff for class popularity.
    pub k_pop: usize,
    pub h_thr: f64,
    pub lam_anchor: f64,
    pub lam_pen: f64,
    pub poe_alpha: f64,
    pub poe_beta: f64,
    pub saw: bool,
    pub cw: bool,
    pub csls_mode: CslsMode,
    pub struct_poe: bool,
}

pub const MIN_LAMBDA: f64 = 1e-6;

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            lambda_reg: None,
            lambda_rel: 1.0,
            tau: 1.0,
            logit_scale: 1.0,
            zscore: false,
            m_density: None,
            k_min: 5,
            k_max: 20,
            k_fixed: 12,
            top_l: 5,
            k_pop: 5,
            h_thr: 0.5,
            lam_anchor: 1.0,
            lam_pen: 1.0,
            poe_alpha: 1.0,
            poe_beta: 1.9,
            saw: true,
            cw: true,
            csls_mode: CslsMode::Adaptive,
            struct_poe: true,
        }
    }
}

impl CalibConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CalibConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate_scalars()?;
        Ok(cfg)
    }

    /// Effective top-m for row densities given `n_classes` columns.
    pub fn m_density_for(&self, n_classes: usize) -> usize {
        self.m_density.unwrap_or_else(|| n_classes.min(50))
    }

    /// Checks the invariants that do not depend on the data shape.
    pub fn validate_scalars(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if let Some(l) = self.lambda_reg {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda_reg must be > 0, got {l}"));
            }
        }
        if !(self.lambda_rel > 0.0 && self.lambda_rel.is_finite()) {
            return bad(format!("lambda_rel must be > 0, got {}", self.lambda_rel));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return bad(format!("logit_scale must be > 0, got {}", self.logit_scale));
        }
        if self.k_min < 1 || self.k_min > self.k_max {
            return bad(format!(
                "need 1 <= k_min <= k_max, got k_min={} k_max={}",
                self.k_min, self.k_max
            ));
        }
        if self.k_fixed < 1 {
            return bad("k_fixed must be >= 1".into());
        }
        if self.top_l < 1 {
            return bad("top_l must be >= 1".into());
        }
        if self.k_pop < 1 {
            return bad("k_pop must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.h_thr) {
            return bad(format!("h_thr must lie in [0, 1], got {}", self.h_thr));
        }
        if !(self.lam_anchor > 0.0 && self.lam_anchor.is_finite()) {
            return bad(format!("lam_anchor must be > 0, got {}", self.lam_anchor));
        }
        if !(self.lam_pen > 0.0 && self.lam_pen.is_finite()) {
            return bad(format!("lam_pen must be > 0, got {}", self.lam_pen));
        }
        if !(self.poe_alpha >= 0.0 && self.poe_alpha.is_finite()) {
            return bad(format!("poe_alpha must be >= 0, got {}", self.poe_alpha));
        }
        if !(self.poe_beta >= 0.0 && self.poe_beta.is_finite()) {
            return bad(format!("poe_beta must be >= 0, got {}", self.poe_beta));
        }
        if self.poe_alpha + self.poe_beta <= 0.0 {
            return bad("poe_alpha + poe_beta must be > 0".into());
        }
        Ok(())
    }

    /// Full validation against a matrix with `n_classes` columns.
    /// Checks the adaptive CSLS bounds `k_max <= m <= C`.
    pub fn validate_density(&self, n_classes: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k_max > n_classes {
            return bad(format!("k_max={} exceeds C={n_classes}", self.k_max));
        }
        let m = self.m_density_for(n_classes);
        if m < self.k_max || m > n_classes {
            return bad(format!(
                "m_density={m} must lie in k_max..=C ({}..={n_classes})",
                self.k_max
            ));
        }
        Ok(())
    }

    /// Full check against a class count, for the stages that are enabled.
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        self.validate_scalars()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self.csls_mode {
            CslsMode::Adaptive => self.validate_density(n_classes)?,
            CslsMode::Fixed if self.k_fixed > n_classes => {
                return bad(format!("k_fixed={} exceeds C={n_classes}", self.k_fixed));
            }
            _ => {}
        }
        if self.struct_poe {
            if self.top_l > n_classes {
                return bad(format!("top_l={} exceeds C={n_classes}", self.top_l));
            }
            if self.k_pop > n_classes {
                return bad(format!("k_pop={} exceeds C={n_classes}", self.k_pop));
            }
        }
        Ok(())
    }
}
