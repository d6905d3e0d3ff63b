//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use critlayer::repr_store::{ReprBundle, ReprMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Haar-ish orthogonal matrix from the QR factor of a random square matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    random_matrix(rng, d, d).qr().q()
}

pub fn random_bundle(rng: &mut ChaCha8Rng, num_layers: usize, num_samples: usize, max_dim: usize) -> ReprBundle {
    let layers = (0..num_layers)
        .map(|_| {
            let d = rng.random_range(1..=max_dim);
            let data = (0..num_samples * d).map(|_| rng.random_range(-4.0f32..4.0)).collect();
            ReprMatrix::new(num_samples, d, data).unwrap()
        })
        .collect();
    ReprBundle::from_layers("test-model", "test-data", layers).unwrap()
}

/// HSIC between Gram matrices with the explicit centering matrix `H`.
fn hsic(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let h = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    (k * &h * l * &h).trace() / ((n - 1) as f64).powi(2)
}

/// Linear CKA evaluated on `n x n` Gram matrices.
pub fn gram_cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let k = x * x.transpose();
    let l = y * y.transpose();
    hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (mkp, mkq) = (row[p], row[q]);
                    row[p] = c * mkp - s * mkq;
                    row[q] = s * mkp + c * mkq;
                }
                let (row_p, row_q) = (m[p].clone(), m[q].clone());
                for (k, (mpk, mqk)) in row_p.into_iter().zip(row_q).enumerate() {
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Rank of each value as (count below) + (count equal + 1) / 2.
pub fn counting_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let below = values.iter().filter(|w| *w < v).count();
            let equal = values.iter().filter(|w| *w == v).count();
            below as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation of the counting ranks.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (counting_ranks(x), counting_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}
