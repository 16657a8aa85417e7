//! Principal components for the spectrogram-feature baseline. Wide inputs
//! (more features than rows) go through the Gram matrix so desk-scale
//! spectrograms stay tractable.

use nalgebra::{DMatrix, SymmetricEigen};

pub struct Pca {
    pub mean: Vec<f64>,
    /// One row per component, unit length, ordered by eigenvalue.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues, non-increasing; zeros flag deficient rank.
    pub eigenvalues: Vec<f64>,
}

pub fn pca_fit(rows: &[Vec<f32>], k: usize) -> Pca {
    let n = rows.len();
    assert!(n > k, "need more rows than components");
    let d = rows[0].len();
    assert!(rows.iter().all(|r| r.len() == d), "ragged feature rows");

    let mut mean = vec![0.0f64; d];
    for row in rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let (components, eigenvalues) = if d <= n {
        covariance_eigen(rows, &mean, k)
    } else {
        gram_eigen(rows, &mean, k)
    };
    Pca {
        mean,
        components,
        eigenvalues,
    }
}

pub fn pca_transform(pca: &Pca, rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            assert_eq!(row.len(), pca.mean.len(), "feature width mismatch");
            pca.components
                .iter()
                .map(|comp| {
                    row.iter()
                        .zip(comp)
                        .zip(&pca.mean)
                        .map(|((&x, &c), &m)| (x as f64 - m) * c)
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn centered(row: &[f32], mean: &[f64]) -> Vec<f64> {
    row.iter().zip(mean).map(|(&x, &m)| x as f64 - m).collect()
}

/// Indices of eigenvalues in descending order.
fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

fn covariance_eigen(rows: &[Vec<f32>], mean: &[f64], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, d) = (rows.len(), mean.len());
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in rows {
        let c = centered(row, mean);
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let order = sorted_desc(eig.eigenvalues.as_slice());
    let take = k.min(d);
    let mut comps = Vec::with_capacity(take);
    let mut vals = Vec::with_capacity(take);
    for &i in order.iter().take(take) {
        comps.push(eig.eigenvectors.column(i).iter().copied().collect());
        vals.push(eig.eigenvalues[i].max(0.0));
    }
    (comps, vals)
}

/// Eigenvectors of the N x N Gram matrix map to covariance eigenvectors as
/// X_c^T v / sqrt(lambda); directions beyond the data rank come back as
/// zero vectors with zero eigenvalues.
fn gram_eigen(rows: &[Vec<f32>], mean: &[f64], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, d) = (rows.len(), mean.len());
    let centered_rows: Vec<Vec<f64>> = rows.iter().map(|r| centered(r, mean)).collect();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = centered_rows[i]
                .iter()
                .zip(&centered_rows[j])
                .map(|(a, b)| a * b)
                .sum();
            gram[(i, j)] = dot;
            gram[(j, i)] = dot;
        }
    }

    let eig = SymmetricEigen::new(gram);
    let order = sorted_desc(eig.eigenvalues.as_slice());
    let floor = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b)) * 1e-12;

    let mut comps = Vec::with_capacity(k);
    let mut vals = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let lambda = eig.eigenvalues[i];
        if lambda <= floor {
            comps.push(vec![0.0; d]);
            vals.push(0.0);
            continue;
        }
        let v = eig.eigenvectors.column(i);
        let scale = 1.0 / lambda.sqrt();
        let mut comp = vec![0.0f64; d];
        for (row, &w) in centered_rows.iter().zip(v.iter()) {
            for (c, &x) in comp.iter_mut().zip(row) {
                *c += w * x * scale;
            }
        }
        comps.push(comp);
        vals.push(lambda / (n - 1) as f64);
    }
    while comps.len() < k {
        comps.push(vec![0.0; d]);
        vals.push(0.0);
    }
    (comps, vals)
}
