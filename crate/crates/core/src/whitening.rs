//! Regularized ZCA whitening of embeddings.
//!
//! A [`WhitenModel`] holds a mean and the symmetric transform
//! `(Σ + λI)^(-1/2)`. Queries get one model per subject (subject-adaptive
//! whitening); candidates get one global model.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::config::{CalibConfig, MIN_LAMBDA};
use crate::error::{Error, Result};
use crate::types::{EmbeddingSet, Role};

/// How the ridge added to the covariance is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    Absolute(f64),
    /// `scale * trace(Σ) / d`, floored at [`MIN_LAMBDA`].
    Relative(f64),
}

impl Ridge {
    pub fn from_config(cfg: &CalibConfig) -> Self {
        match cfg.lambda_reg {
            Some(l) => Ridge::Absolute(l),
            None => Ridge::Relative(cfg.lambda_rel),
        }
    }

    fn resolve(self, cov: &Array2<f64>) -> f64 {
        match self {
            Ridge::Absolute(l) => l,
            Ridge::Relative(scale) => {
                let d = cov.nrows() as f64;
                (scale * cov.diag().sum() / d).max(MIN_LAMBDA)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenModel {
    pub mean: Array1<f64>,
    pub w: Array2<f64>,
    pub lambda_reg: f64,
    pub n_fit: usize,
}

impl WhitenModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Identity transform of dimension `d`.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: Array1::zeros(d),
            w: Array2::eye(d),
            lambda_reg: 1.0,
            n_fit: 0,
        }
    }

    fn transform_row(&self, x: ndarray::ArrayView1<f64>, out: ndarray::ArrayViewMut1<f64>) {
        let centered: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, m)| a - m).collect();
        for (o, w_row) in out.into_iter().zip(self.w.rows()) {
            let mut acc = 0.0;
            for (w, c) in w_row.iter().zip(&centered) {
                acc += w * c;
            }
            *o = acc;
        }
    }
}

/// Population mean and covariance of the rows.
pub fn moments(vectors: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = vectors.nrows();
    if n == 0 {
        return Err(Error::DegenerateInput);
    }
    let mean = vectors.mean_axis(Axis(0)).ok_or(Error::DegenerateInput)?;
    let centered = &vectors - &mean.view().insert_axis(Axis(0));
    let mut cov = centered.t().dot(&centered) / n as f64;
    let sym = (&cov + &cov.t()) * 0.5;
    cov.assign(&sym);
    Ok((mean, cov))
}

/// `(cov + λI)^(-1/2)` through a symmetric eigendecomposition. Eigenvalues
/// are clamped at zero before the ridge is added.
pub fn inverse_sqrt(cov: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let d = cov.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let scales: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&ev| 1.0 / (ev.max(0.0) + lambda).sqrt())
        .collect();
    let u = &eig.eigenvectors;
    let mut w = Array2::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for (k, s) in scales.iter().enumerate() {
                acc += u[(i, k)] * s * u[(j, k)];
            }
            w[[i, j]] = acc;
            w[[j, i]] = acc;
        }
    }
    w
}

/// Fits a whitening model with an explicit ridge `lambda_reg > 0`.
pub fn fit(vectors: ArrayView2<f64>, lambda_reg: f64) -> Result<WhitenModel> {
    if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda_reg must be > 0, got {lambda_reg}"
        )));
    }
    fit_with(vectors, Ridge::Absolute(lambda_reg))
}

pub fn fit_with(vectors: ArrayView2<f64>, ridge: Ridge) -> Result<WhitenModel> {
    let (n, d) = vectors.dim();
    let (mean, cov) = moments(vectors)?;
    if (n as f64) < d as f64 / 4.0 {
        log::warn!("fitting a {d}-dimensional whitening model on only {n} samples");
    }
    let lambda = ridge.resolve(&cov);
    Ok(WhitenModel {
        mean,
        w: inverse_sqrt(&cov, lambda),
        lambda_reg: lambda,
        n_fit: n,
    })
}

/// Maps each row `x` to `w · (x − mean)`. No normalization.
pub fn apply(model: &WhitenModel, vectors: ArrayView2<f64>) -> Result<Array2<f64>> {
    if vectors.ncols() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            found: vectors.ncols(),
        });
    }
    let mut out = Array2::zeros(vectors.raw_dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(vectors.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(o, x)| model.transform_row(x, o));
    Ok(out)
}

/// One model per subject, each fit only on that subject's rows.
pub fn saw_fit_per_subject(
    queries: &EmbeddingSet,
    ridge: Ridge,
) -> Result<BTreeMap<usize, WhitenModel>> {
    queries.expect_role(Role::Query)?;
    let subjects: Vec<usize> = (0..queries.num_subjects()).collect();
    subjects
        .into_par_iter()
        .map(|s| {
            let rows = queries.rows_of_subject(s);
            let block = queries.vectors.select(Axis(0), &rows);
            fit_with(block.view(), ridge).map(|m| (s, m))
        })
        .collect()
}

/// Whitens every query row with the model of its subject.
pub fn apply_per_subject(
    queries: &EmbeddingSet,
    models: &BTreeMap<usize, WhitenModel>,
) -> Result<Array2<f64>> {
    let d = queries.dim();
    for &s in &queries.subject_of {
        let model = models.get(&s).ok_or(Error::UnknownSubject(s))?;
        if model.dim() != d {
            return Err(Error::DimMismatch {
                expected: model.dim(),
                found: d,
            });
        }
    }
    let mut out = Array2::zeros(queries.vectors.raw_dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(queries.vectors.axis_iter(Axis(0)).into_par_iter())
        .zip(queries.subject_of.par_iter())
        .for_each(|((o, x), s)| models[s].transform_row(x, o));
    Ok(out)
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(vectors: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = vectors.to_owned();
    for (row, mut r) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroVector { row });
        }
        r.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}
