//! Dense vector helpers on plain slices.
//!
//! Iterates are stored as `Vec<f64>` and every reduction runs left to right,
//! so results are reproducible bit for bit across runs and machines.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `x - step * g`, coordinate by coordinate.
pub fn step(x: &[f64], step: f64, g: &[f64]) -> Vec<f64> {
    x.iter().zip(g).map(|(xi, gi)| xi - step * gi).collect()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Standard Gaussian vector.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Uniform direction on the unit sphere, scaled so its squared norm never
/// exceeds one after rounding.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, d);
        let n = norm(&g);
        if n > 1e-8 {
            return clamp_unit(scale(&g, 1.0 / n));
        }
    }
}

/// Shrinks `v` by a few ulps until `‖v‖² <= 1`.
pub fn clamp_unit(mut v: Vec<f64>) -> Vec<f64> {
    while norm_sq(&v) > 1.0 {
        for x in v.iter_mut() {
            *x *= 1.0 - f64::EPSILON;
        }
    }
    v
}

pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Builds a matrix from row slices.
pub fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().fold(0.0_f64, |m, &s| m.max(s))
}

/// Moore-Penrose pseudoinverse through the SVD, zeroing singular values
/// below `rel_cutoff * sigma_max`. Returns `None` if the SVD fails.
pub fn pseudoinverse(a: &DMatrix<f64>, rel_cutoff: f64) -> Option<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Some(DMatrix::zeros(cols, rows));
    }
    let svd = a.clone().try_svd(true, true, f64::EPSILON, 10_000)?;
    let u = svd.u?;
    let v_t = svd.v_t?;
    let s = &svd.singular_values;
    let sigma_max = s.iter().fold(0.0_f64, |m, &x| m.max(x));
    let cutoff = rel_cutoff * sigma_max;
    let mut pinv = DMatrix::zeros(cols, rows);
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff && sk > 0.0 {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            pinv += (vk / sk) * uk.transpose();
        }
    }
    Some(pinv)
}
