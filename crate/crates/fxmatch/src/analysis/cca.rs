//! Canonical correlation analysis through Cholesky whitening and an SVD of
//! the whitened cross-covariance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// X-side canonical variates for the top-k pairs plus their correlations.
/// Correlations are clamped to [0,1] and non-increasing.
pub fn cca_project(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    k: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = x.len();
    assert_eq!(n, y.len(), "row count mismatch");
    assert!(n >= 2, "need at least two rows");
    let (dx, dy) = (x[0].len(), y[0].len());
    assert!(n > dx + dy, "need more rows than total columns");
    assert!(k <= dx.min(dy), "k exceeds the smaller side");

    let xc = standardized_matrix(x, dx);
    let yc = standardized_matrix(y, dy);
    let denom = (n - 1) as f64;
    let sxx = ridged(xc.transpose() * &xc / denom);
    let syy = ridged(yc.transpose() * &yc / denom);
    let sxy = xc.transpose() * &yc / denom;

    let lx = sxx.cholesky().ok_or_else(|| degenerate("x"))?.l();
    let ly = syy.cholesky().ok_or_else(|| degenerate("y"))?.l();

    // M = Lx^-1 Sxy Ly^-T, whose singular values are the correlations.
    let half = lx
        .solve_lower_triangular(&sxy)
        .ok_or_else(|| degenerate("x"))?;
    let m = ly
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| degenerate("y"))?
        .transpose();

    let svd = m.svd(true, false);
    let u = svd.u.as_ref().expect("svd requested u");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut correlations = Vec::with_capacity(k);
    let mut weights = DMatrix::<f64>::zeros(dx, k);
    for (col, &i) in order.iter().take(k).enumerate() {
        correlations.push(svd.singular_values[i].clamp(0.0, 1.0));
        weights.set_column(col, &u.column(i));
    }
    // Map the whitened directions back: Wx = Lx^-T U.
    let wx = lx
        .transpose()
        .solve_upper_triangular(&weights)
        .ok_or_else(|| degenerate("x"))?;

    let projected_m = xc * wx;
    let projected = (0..n)
        .map(|i| projected_m.row(i).iter().copied().collect())
        .collect();
    Ok((projected, correlations))
}

/// Center and scale columns to unit variance. Correlations are affine
/// invariants, so this is free, and it makes the ridge act uniformly: an
/// isotropic ridge on raw covariances would perturb weak correlations by an
/// amount that depends on the column scaling.
fn standardized_matrix(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    assert!(rows.iter().all(|r| r.len() == d), "ragged rows");
    let n = rows.len();
    let mut mean = vec![0.0f64; d];
    for row in rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut scale = vec![0.0f64; d];
    for row in rows {
        for ((s, &v), &m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut scale {
        let var = *s / (n - 1) as f64;
        *s = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    }
    DMatrix::from_fn(n, d, |i, j| (rows[i][j] - mean[j]) * scale[j])
}

fn degenerate(side: &str) -> Error {
    Error::DegenerateCovariance(format!("{side}-side covariance is singular after ridging"))
}

fn ridged(mut s: DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let ridge = 1e-6 * s.diagonal().sum() / d as f64;
    for i in 0..d {
        s[(i, i)] += ridge;
    }
    s
}
