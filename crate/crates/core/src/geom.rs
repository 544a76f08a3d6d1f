//! CSLS rescoring with fixed or density-adaptive neighborhood sizes.
//!
//! `S_geom(q, c) = 2 s(q, c) − r_q(q) − r_c(c)` where `r_q` is the mean of
//! the `k_row(q)` largest scores in row `q` and `r_c` the mean of the
//! `k_col(c)` largest scores in column `c`. Everything here is computed from
//! `S_new` alone.

use ndarray::{Array1, Array2, Axis, Zip};
use rayon::prelude::*;

use crate::config::CalibConfig;
use crate::error::{Error, Result};
use crate::rank::{order_desc, sorted_desc, top_k_mean};
use crate::types::{SimMatrix, Stage};

/// Local densities and the neighborhood sizes derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub rho_row: Array1<f64>,
    pub rho_col: Array1<f64>,
    pub k_row: Vec<usize>,
    pub k_col: Vec<usize>,
}

/// Mean of the `m` largest scores of every row.
pub fn row_density(s_new: &SimMatrix, m: usize) -> Result<Array1<f64>> {
    s_new.expect_stage(Stage::New)?;
    let c = s_new.n_classes();
    if m == 0 || m > c {
        return Err(Error::BadM { m, max: c });
    }
    let rows: Vec<f64> = s_new
        .scores
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|r| top_k_mean(&sorted_desc(r), m))
        .collect();
    Ok(Array1::from(rows))
}

/// Fraction of queries whose top-`k_max` list contains each class.
pub fn col_density(s_new: &SimMatrix, k_max: usize) -> Result<Array1<f64>> {
    s_new.expect_stage(Stage::New)?;
    let (nq, c) = s_new.shape();
    if k_max == 0 || k_max > c {
        return Err(Error::BadK { k: k_max, max: c });
    }
    let mut counts = vec![0usize; c];
    let tops: Vec<Vec<usize>> = s_new
        .scores
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|r| {
            let mut order = order_desc(r);
            order.truncate(k_max);
            order
        })
        .collect();
    for top in tops {
        for j in top {
            counts[j] += 1;
        }
    }
    Ok(counts.into_iter().map(|n| n as f64 / nq as f64).collect())
}

/// Linear min-max map from densities onto integers in `[k_min, k_max]`,
/// rounding half to even. Equal densities all map to the floor midpoint.
pub fn density_to_k(rho: &Array1<f64>, k_min: usize, k_max: usize) -> Vec<usize> {
    let lo = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(k_min + k_max) / 2; rho.len()];
    }
    let span = (k_max - k_min) as f64;
    rho.iter()
        .map(|&r| {
            let t = (r - lo) / (hi - lo);
            let k = k_min as f64 + (t * span).round_ties_even();
            (k as usize).clamp(k_min, k_max)
        })
        .collect()
}

/// Row and column neighborhood means for per-index neighborhood sizes.
pub fn csls_terms(
    s_new: &SimMatrix,
    k_row: &[usize],
    k_col: &[usize],
) -> Result<(Array1<f64>, Array1<f64>)> {
    s_new.expect_stage(Stage::New)?;
    let (nq, c) = s_new.shape();
    if k_row.len() != nq || k_col.len() != c {
        return Err(Error::ShapeMismatch {
            left: (nq, c),
            right: (k_row.len(), k_col.len()),
        });
    }
    if let Some(&k) = k_row.iter().find(|&&k| k == 0 || k > c) {
        return Err(Error::BadK { k, max: c });
    }
    if let Some(&k) = k_col.iter().find(|&&k| k == 0 || k > nq) {
        return Err(Error::BadK { k, max: nq });
    }
    let r_q: Vec<f64> = s_new
        .scores
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(k_row.par_iter())
        .map(|(r, &k)| top_k_mean(&sorted_desc(r), k))
        .collect();
    let r_c: Vec<f64> = s_new
        .scores
        .axis_iter(Axis(1))
        .into_par_iter()
        .zip(k_col.par_iter())
        .map(|(col, &k)| top_k_mean(&sorted_desc(col), k))
        .collect();
    Ok((Array1::from(r_q), Array1::from(r_c)))
}

fn assemble(s_new: &SimMatrix, r_q: &Array1<f64>, r_c: &Array1<f64>) -> SimMatrix {
    let mut out = Array2::zeros(s_new.scores.raw_dim());
    Zip::indexed(&mut out)
        .and(&s_new.scores)
        .for_each(|(i, j), o, &s| *o = 2.0 * s - r_q[i] - r_c[j]);
    s_new.derive(out, Stage::Geom)
}

/// Densities and neighborhood sizes for `S_new` under `cfg`.
///
/// Column sizes are additionally capped at `|Q|` so that small query batches
/// stay well defined.
pub fn density_profile(s_new: &SimMatrix, cfg: &CalibConfig) -> Result<DensityProfile> {
    let (nq, c) = s_new.shape();
    cfg.validate_scalars()?;
    cfg.validate_density(c)?;
    let rho_row = row_density(s_new, cfg.m_density_for(c))?;
    let rho_col = col_density(s_new, cfg.k_max)?;
    let k_row = density_to_k(&rho_row, cfg.k_min, cfg.k_max);
    let k_col = density_to_k(&rho_col, cfg.k_min, cfg.k_max)
        .into_iter()
        .map(|k| k.min(nq))
        .collect();
    Ok(DensityProfile {
        rho_row,
        rho_col,
        k_row,
        k_col,
    })
}

pub fn adaptive_csls_with_profile(
    s_new: &SimMatrix,
    cfg: &CalibConfig,
) -> Result<(SimMatrix, DensityProfile)> {
    let profile = density_profile(s_new, cfg)?;
    let (r_q, r_c) = csls_terms(s_new, &profile.k_row, &profile.k_col)?;
    Ok((assemble(s_new, &r_q, &r_c), profile))
}

/// Adaptive CSLS geometric expert.
pub fn adaptive_csls(s_new: &SimMatrix, cfg: &CalibConfig) -> Result<SimMatrix> {
    adaptive_csls_with_profile(s_new, cfg).map(|(s, _)| s)
}

/// Standard CSLS with neighborhood size `k` on both sides.
pub fn fixed_csls(s_new: &SimMatrix, k: usize) -> Result<SimMatrix> {
    s_new.expect_stage(Stage::New)?;
    let (nq, c) = s_new.shape();
    let max = nq.min(c);
    if k == 0 || k > max {
        return Err(Error::BadK { k, max });
    }
    let (r_q, r_c) = csls_terms(s_new, &vec![k; nq], &vec![k; c])?;
    Ok(assemble(s_new, &r_q, &r_c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn snew(m: Array2<f64>) -> SimMatrix {
        SimMatrix::new(m, Stage::New)
    }

    #[test]
    fn row_density_by_hand() {
        let s = snew(array![[0.9, 0.5, 0.1], [0.3, 0.3, 0.3]]);
        let rho = row_density(&s, 2).unwrap();
        assert!((rho[0] - 0.7).abs() < 1e-15);
        assert!((rho[1] - 0.3).abs() < 1e-15);
        assert!(matches!(
            row_density(&s, 4),
            Err(Error::BadM { m: 4, max: 3 })
        ));
        assert!(matches!(row_density(&s, 0), Err(Error::BadM { .. })));
    }

    #[test]
    fn col_density_single_query() {
        let s = snew(array![[0.1, 0.7, 0.3, 0.9, 0.2]]);
        let rho = col_density(&s, 2).unwrap();
        assert_eq!(rho, array![0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn col_density_identical_rows() {
        let s = snew(array![[0.1, 0.7, 0.3], [0.1, 0.7, 0.3], [0.1, 0.7, 0.3]]);
        assert_eq!(col_density(&s, 2).unwrap(), array![0.0, 1.0, 1.0]);
    }

    #[test]
    fn density_map_examples() {
        assert_eq!(density_to_k(&array![0.0, 1.0], 5, 20), vec![5, 20]);
        assert_eq!(density_to_k(&array![0.4, 0.4, 0.4], 5, 20), vec![12; 3]);
        assert_eq!(density_to_k(&array![0.0, 0.5, 1.0], 1, 3), vec![1, 2, 3]);
        // 0.25 * 2 = 0.5 rounds to 0, 0.75 * 2 = 1.5 rounds to 2
        assert_eq!(
            density_to_k(&array![0.0, 0.25, 0.75, 1.0], 1, 3),
            vec![1, 1, 3, 3]
        );
    }

    #[test]
    fn csls_terms_by_hand() {
        let s = snew(array![[0.9, 0.5, 0.1], [0.2, 0.8, 0.4]]);
        let (r_q, r_c) = csls_terms(&s, &[1, 3], &[2, 1, 2]).unwrap();
        assert!((r_q[0] - 0.9).abs() < 1e-15);
        assert!((r_q[1] - 1.4 / 3.0).abs() < 1e-15);
        assert!((r_c[0] - 0.55).abs() < 1e-15);
        assert!((r_c[1] - 0.8).abs() < 1e-15);
        assert!((r_c[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn full_column_mean() {
        let s = snew(array![[0.2], [0.8]]);
        let (_, r_c) = csls_terms(&s, &[1, 1], &[2]).unwrap();
        assert!((r_c[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fixed_full_neighborhood_uses_means() {
        let m = array![[1.0, 2.0, 3.0], [4.0, 0.0, 2.0], [0.5, 0.5, 5.0]];
        let g = fixed_csls(&snew(m.clone()), 3).unwrap();
        let rows = m.mean_axis(Axis(1)).unwrap();
        let cols = m.mean_axis(Axis(0)).unwrap();
        for ((i, j), v) in g.scores.indexed_iter() {
            assert!((v - (2.0 * m[[i, j]] - rows[i] - cols[j])).abs() < 1e-12);
        }
        assert_eq!(g.stage, Stage::Geom);
    }

    #[test]
    fn fixed_single_entry_and_bad_k() {
        let s = snew(array![[0.37]]);
        assert_eq!(fixed_csls(&s, 1).unwrap().scores, array![[0.0]]);
        assert!(matches!(
            fixed_csls(&s, 2),
            Err(Error::BadK { k: 2, max: 1 })
        ));
        assert!(matches!(fixed_csls(&s, 0), Err(Error::BadK { .. })));
    }

    #[test]
    fn constant_matrix_maps_to_zero() {
        let s = snew(Array2::from_elem((25, 30), 0.42));
        let cfg = CalibConfig {
            k_max: 20,
            m_density: Some(30),
            ..Default::default()
        };
        let g = adaptive_csls(&s, &cfg).unwrap();
        assert!(g.scores.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn wrong_stage_is_rejected() {
        let s = SimMatrix::new(array![[1.0]], Stage::Base);
        assert!(matches!(fixed_csls(&s, 1), Err(Error::WrongStage { .. })));
    }

    proptest::proptest! {
        #[test]
        fn density_map_is_monotone_and_bounded(
            rho in proptest::collection::vec(-5.0f64..5.0, 1..40),
            k_min in 1usize..10,
            extra in 0usize..15,
        ) {
            let k_max = k_min + extra;
            let rho = Array1::from(rho);
            let k = density_to_k(&rho, k_min, k_max);
            for i in 0..rho.len() {
                proptest::prop_assert!(k[i] >= k_min && k[i] <= k_max);
                for j in 0..rho.len() {
                    if rho[i] <= rho[j] {
                        proptest::prop_assert!(k[i] <= k[j]);
                    }
                }
            }
        }
    }
}
