//! Brute-force reference implementations shared by the integration tests.
//! They favor obviousness over speed and share no code with the library.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in [-1, 1); ties have probability zero.
pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

fn top_mean(mut v: Vec<f64>, k: usize) -> f64 {
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v[..k].iter().sum::<f64>() / k as f64
}

pub fn row_top_mean(s: &Array2<f64>, q: usize, k: usize) -> f64 {
    top_mean(s.row(q).to_vec(), k)
}

pub fn col_top_mean(s: &Array2<f64>, c: usize, k: usize) -> f64 {
    top_mean(s.column(c).to_vec(), k)
}

/// 1-based rank of entry `j` in `v`: larger first, lower index first on ties.
pub fn pairwise_rank(v: &[f64], j: usize) -> usize {
    1 + (0..v.len())
        .filter(|&i| v[i] > v[j] || (v[i] == v[j] && i < j))
        .count()
}

pub fn naive_row_ranks(s: &Array2<f64>) -> Array2<usize> {
    Array2::from_shape_fn(s.dim(), |(q, c)| pairwise_rank(&s.row(q).to_vec(), c))
}

/// `out[[q, c]]` is the rank of query q within column c.
pub fn naive_col_ranks(s: &Array2<f64>) -> Array2<usize> {
    Array2::from_shape_fn(s.dim(), |(q, c)| pairwise_rank(&s.column(c).to_vec(), q))
}

pub fn naive_membership(s: &Array2<f64>, k: usize) -> Vec<usize> {
    let r = naive_row_ranks(s);
    (0..s.ncols())
        .map(|c| (0..s.nrows()).filter(|&q| r[[q, c]] <= k).count())
        .collect()
}

pub fn naive_density_to_k(rho: &[f64], kmin: usize, kmax: usize) -> Vec<usize> {
    let lo = rho.iter().cloned().fold(f64::MAX, f64::min);
    let hi = rho.iter().cloned().fold(f64::MIN, f64::max);
    rho.iter()
        .map(|&r| {
            if hi == lo {
                (kmin + kmax) / 2
            } else {
                let x = (r - lo) / (hi - lo) * (kmax - kmin) as f64;
                // half to even, spelled out
                let f = x.floor();
                let frac = x - f;
                let n = if frac > 0.5 || (frac == 0.5 && (f as i64) % 2 == 1) {
                    f + 1.0
                } else {
                    f
                };
                kmin + n as usize
            }
        })
        .collect()
}

pub fn naive_csls(s: &Array2<f64>, k_row: &[usize], k_col: &[usize]) -> Array2<f64> {
    let (nq, c) = s.dim();
    let rq: Vec<f64> = (0..nq).map(|q| row_top_mean(s, q, k_row[q])).collect();
    let rc: Vec<f64> = (0..c).map(|j| col_top_mean(s, j, k_col[j])).collect();
    Array2::from_shape_fn((nq, c), |(q, j)| 2.0 * s[[q, j]] - rq[q] - rc[j])
}

/// Adaptive CSLS written from the equations, including the `|Q|` column cap.
pub fn naive_adaptive_csls(s: &Array2<f64>, m: usize, kmin: usize, kmax: usize) -> Array2<f64> {
    let (nq, _) = s.dim();
    let rho_row: Vec<f64> = (0..nq).map(|q| row_top_mean(s, q, m)).collect();
    let rho_col: Vec<f64> = naive_membership(s, kmax)
        .into_iter()
        .map(|n| n as f64 / nq as f64)
        .collect();
    let k_row = naive_density_to_k(&rho_row, kmin, kmax);
    let k_col: Vec<usize> = naive_density_to_k(&rho_col, kmin, kmax)
        .into_iter()
        .map(|k| k.min(nq))
        .collect();
    naive_csls(s, &k_row, &k_col)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix: (values, vectors
/// as columns).
pub fn jacobi_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (Array1::from_shape_fn(n, |i| a[[i, i]]), v)
}

/// Two-pass population mean and covariance.
pub fn naive_moments(x: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let (n, d) = x.dim();
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x[[i, j]]).sum::<f64>() / n as f64)
        .collect();
    let cov = Array2::from_shape_fn((d, d), |(a, b)| {
        (0..n)
            .map(|i| (x[[i, a]] - mean[a]) * (x[[i, b]] - mean[b]))
            .sum::<f64>()
            / n as f64
    });
    (mean, cov)
}

pub fn skew_oracle(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}
