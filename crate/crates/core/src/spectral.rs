//! Singular value decomposition of centered layer matrices, principal
//! features, and canonical correlations between top-K principal subspaces.
//!
//! Individual singular vectors are never matched across layers: leading
//! singular values are often nearly equal, so only subspaces are compared.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr_store::{ReprBundle, ReprMatrix};
use crate::similarity::{center_f64, window_range, CurveEntry};

/// Singular values at or below `RANK_TOL * sigma_1` are dropped.
pub const RANK_TOL: f64 = 1e-10;

/// Thin SVD `(U, sigma, V)`. Backed by faer, which stays accurate on the
/// rank-deficient matrices that centering always produces.
fn thin_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD of a {}x{} matrix failed: {e:?}", m.nrows(), m.ncols())))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let u = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]);
    let v = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]);
    Ok((u, (0..s.nrows()).map(|k| s[k]).collect(), v))
}

/// Thin SVD `X~ = U diag(sigma) V^T` of a centered layer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    pub layer_index: usize,
    /// `N x r`, orthonormal columns.
    pub left_vectors: DMatrix<f64>,
    /// Descending, length `r`.
    pub singular_values: Vec<f64>,
    /// `d x r`, orthonormal columns.
    pub right_vectors: DMatrix<f64>,
    pub rank: usize,
}

impl SpectralDecomp {
    pub fn num_samples(&self) -> usize {
        self.left_vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.right_vectors.nrows()
    }

    /// `U diag(sigma) V^T` using the leading `k` components.
    pub fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.rank);
        let mut us = self.left_vectors.columns(0, k).into_owned();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.singular_values[j];
        }
        us * self.right_vectors.columns(0, k).transpose()
    }
}

/// Decomposes `center(x)`.
pub fn decompose(x: &ReprMatrix) -> Result<SpectralDecomp> {
    decompose_f64(&x.to_f64(), 0)
}

pub fn decompose_layer(bundle: &ReprBundle, layer: usize) -> Result<SpectralDecomp> {
    let m = bundle
        .layers
        .get(layer)
        .ok_or_else(|| Error::out_of_range("layer", layer, format!("0..{}", bundle.num_layers())))?;
    decompose_f64(&m.to_f64(), layer).map_err(|e| match e {
        Error::ZeroVariance(_) => Error::DegenerateLayer(layer),
        e => e,
    })
}

/// Centers `x` and decomposes it. The sign of each component is fixed so
/// that the largest-magnitude entry of its left vector is non-negative.
pub fn decompose_f64(x: &DMatrix<f64>, layer_index: usize) -> Result<SpectralDecomp> {
    let centered = center_f64(x)?;
    let scale = x.norm().max(f64::MIN_POSITIVE);
    if centered.norm() <= 1e-12 * scale {
        return Err(Error::ZeroVariance("layer matrix"));
    }

    let (u, sigma, v) = thin_svd(&centered).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("layer {layer_index}: {msg}")),
        e => e,
    })?;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let sigma_max = sigma[order[0]];
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sigma[i] > RANK_TOL * sigma_max)
        .collect();
    let rank = kept.len();

    let n = centered.nrows();
    let d = centered.ncols();
    let mut left = DMatrix::zeros(n, rank);
    let mut right = DMatrix::zeros(d, rank);
    let mut singular_values = Vec::with_capacity(rank);
    for (j, &i) in kept.iter().enumerate() {
        let mut uc = u.column(i).into_owned();
        let mut vc = v.column(i).into_owned();
        // magnitudes equal to rounding count as ties; the lowest index wins
        let max_abs = uc.amax();
        let pivot = uc
            .iter()
            .copied()
            .find(|v| v.abs() >= max_abs * (1.0 - 1e-12))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        left.set_column(j, &uc);
        right.set_column(j, &vc);
        singular_values.push(sigma[i]);
    }

    Ok(SpectralDecomp {
        layer_index,
        left_vectors: left,
        singular_values,
        right_vectors: right,
        rank,
    })
}

/// Columns `f_k = sigma_k * U[:, k]` for the leading `k` components.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalFeatures {
    pub layer_index: usize,
    pub k: usize,
    /// `N x K`.
    pub features: DMatrix<f64>,
}

pub fn principal_features(decomp: &SpectralDecomp, k: usize) -> Result<PrincipalFeatures> {
    if k < 1 || k > decomp.rank {
        return Err(Error::out_of_range("K", k, format!("1..={}", decomp.rank)));
    }
    let mut features = decomp.left_vectors.columns(0, k).into_owned();
    for (j, mut col) in features.column_iter_mut().enumerate() {
        col *= decomp.singular_values[j];
    }
    Ok(PrincipalFeatures {
        layer_index: decomp.layer_index,
        k,
        features,
    })
}

/// Orthonormal basis of the column span, dropping numerically null
/// directions. `None` when every column drops.
fn orthonormal_basis(block: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    if block.ncols() == 0 || block.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    let (u, sigma, _) = thin_svd(block)?;
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let kept: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] > RANK_TOL * sigma_max).collect();
    if kept.is_empty() {
        return Ok(None);
    }
    Ok(Some(u.select_columns(kept.iter())))
}

/// Canonical correlations between the spans of two orthonormal bases.
fn canonical_correlations(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Result<Vec<f64>> {
    let cross = qa.transpose() * qb;
    let (_, sv, _) = thin_svd(&cross)?;
    Ok(sv.iter().map(|s| s.clamp(0.0, 1.0)).collect())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean canonical correlation between the subspaces spanned by two feature
/// blocks over the same samples.
pub fn cca_topk(a: &PrincipalFeatures, b: &PrincipalFeatures) -> Result<f64> {
    cca_blocks(&a.features, &b.features)
}

pub fn cca_blocks(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::RowMismatch {
            left: a.nrows(),
            right: b.nrows(),
        });
    }
    let qa = orthonormal_basis(a)?.ok_or(Error::ZeroVariance("first feature block"))?;
    let qb = orthonormal_basis(b)?.ok_or(Error::ZeroVariance("second feature block"))?;
    Ok(mean(&canonical_correlations(&qa, &qb)?))
}

/// Windowed average of top-K canonical correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaCurve {
    pub topk: usize,
    pub k: usize,
    pub entries: Vec<CurveEntry>,
    pub valid_range: (usize, usize),
}

/// Decomposes every layer of `bundle` in parallel.
pub fn decompose_bundle(bundle: &ReprBundle) -> Result<Vec<SpectralDecomp>> {
    (0..bundle.num_layers())
        .into_par_iter()
        .map(|l| decompose_layer(bundle, l))
        .collect()
}

pub fn cca_curve(bundle: &ReprBundle, topk: usize, k: usize) -> Result<CcaCurve> {
    let decomps = decompose_bundle(bundle)?;
    cca_curve_from_decomps(&decomps, topk, k)
}

pub fn cca_curve_from_decomps(decomps: &[SpectralDecomp], topk: usize, k: usize) -> Result<CcaCurve> {
    if topk < 1 {
        return Err(Error::out_of_range("K", topk, ">= 1"));
    }
    let (lo, hi) = window_range(decomps.len(), k)?;
    let bases = decomps
        .iter()
        .map(|d| {
            let f = principal_features(d, topk)?;
            orthonormal_basis(&f.features)?.ok_or(Error::DegenerateLayer(d.layer_index))
        })
        .collect::<Result<Vec<_>>>()?;

    let entries = (lo..=hi)
        .into_par_iter()
        .map(|l| {
            let mut correlations = Vec::with_capacity(2 * k);
            for j in l - k..=l + k {
                if j != l {
                    correlations.push(mean(&canonical_correlations(&bases[l], &bases[j])?));
                }
            }
            Ok(CurveEntry {
                layer: l,
                value: correlations.iter().sum::<f64>() / (2 * k) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CcaCurve {
        topk,
        k,
        entries,
        valid_range: (lo, hi),
    })
}

/// Linear CKA recomputed from two decompositions:
/// `||diag(s_a) U_a^T U_b diag(s_b)||_F^2 / (||s_a||_4^2 ||s_b||_4^2)`.
pub fn linear_cka_from_decomps(a: &SpectralDecomp, b: &SpectralDecomp) -> Result<f64> {
    if a.num_samples() != b.num_samples() {
        return Err(Error::RowMismatch {
            left: a.num_samples(),
            right: b.num_samples(),
        });
    }
    let mut cross = a.left_vectors.transpose() * &b.left_vectors;
    for i in 0..a.rank {
        for j in 0..b.rank {
            cross[(i, j)] *= a.singular_values[i] * b.singular_values[j];
        }
    }
    let quartic = |s: &[f64]| s.iter().map(|v| v.powi(4)).sum::<f64>().sqrt();
    Ok(cross.norm_squared() / (quartic(&a.singular_values) * quartic(&b.singular_values)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_analytic() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let d = decompose_f64(&x, 0).unwrap();
        assert_eq!(d.rank, 1);
        assert!((d.singular_values[0] - 2f64.sqrt()).abs() < 1e-12);
        let f = principal_features(&d, 1).unwrap();
        assert!((f.features[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((f.features[(1, 0)] + 1.0).abs() < 1e-12);
        assert!((d.right_vectors[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_k_bounds() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let d = decompose_f64(&x, 0).unwrap();
        assert!(principal_features(&d, 0).is_err());
        assert!(principal_features(&d, 2).is_err());
    }

    #[test]
    fn zero_variance_rejected() {
        let x = DMatrix::from_element(3, 2, 4.0);
        assert!(matches!(decompose_f64(&x, 0), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn cca_axis_aligned() {
        let e = DMatrix::<f64>::identity(4, 4);
        let a = e.columns(0, 2).into_owned();
        let b = e.columns(2, 2).into_owned();
        assert!(cca_blocks(&a, &b).unwrap().abs() < 1e-10);
        assert!((cca_blocks(&a, &a).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cca_drops_null_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[2.0, 0.0, -2.0]);
        assert!((cca_blocks(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let zero = DMatrix::zeros(3, 2);
        assert!(cca_blocks(&a, &zero).is_err());
        assert!(cca_blocks(&a, &DMatrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn decomposition_is_reproducible() {
        let x = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * j as f64);
        let a = decompose_f64(&x, 0).unwrap();
        let b = decompose_f64(&x, 0).unwrap();
        assert_eq!(a, b);
    }
}
