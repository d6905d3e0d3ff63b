//! Removal of the leading principal components from a layer's
//! representations.
//!
//! The removal basis comes from the batch's own centered matrix; sample `i`
//! uses row `i` of the left singular vectors. Downstream layers are not
//! recomputed here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr_store::{ReprBundle, ReprMatrix};
use crate::spectral::{decompose_layer, SpectralDecomp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanMode {
    RemoveTopk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanSpec {
    pub layer_index: usize,
    pub k: usize,
    pub mode: CleanMode,
}

impl CleanSpec {
    pub fn remove_topk(layer_index: usize, k: usize) -> Self {
        CleanSpec {
            layer_index,
            k,
            mode: CleanMode::RemoveTopk,
        }
    }

    pub fn validate(&self, bundle: &ReprBundle) -> Result<()> {
        if self.k < 1 {
            return Err(Error::out_of_range("K", self.k, ">= 1"));
        }
        if self.layer_index >= bundle.num_layers() {
            return Err(Error::out_of_range(
                "layer",
                self.layer_index,
                format!("0..{}", bundle.num_layers()),
            ));
        }
        Ok(())
    }
}

/// `U[i, :] diag(sigma_1..sigma_K, 0, ..) V^T` for sample `i`.
pub fn topk_contribution(decomp: &SpectralDecomp, sample_index: usize, k: usize) -> Result<DVector<f64>> {
    if k < 1 || k > decomp.rank {
        return Err(Error::out_of_range("K", k, format!("1..={}", decomp.rank)));
    }
    if sample_index >= decomp.num_samples() {
        return Err(Error::out_of_range(
            "sample_index",
            sample_index,
            format!("0..{}", decomp.num_samples()),
        ));
    }
    let mut out = DVector::zeros(decomp.dim());
    for c in 0..k {
        let weight = decomp.left_vectors[(sample_index, c)] * decomp.singular_values[c];
        out.axpy(weight, &decomp.right_vectors.column(c), 1.0);
    }
    Ok(out)
}

/// Subtracts each sample's top-K contribution from the raw rows of `x`.
pub fn remove_topk(x: &DMatrix<f64>, decomp: &SpectralDecomp, k: usize) -> Result<DMatrix<f64>> {
    if x.nrows() != decomp.num_samples() || x.ncols() != decomp.dim() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, decomposition is {}x{}",
            x.nrows(),
            x.ncols(),
            decomp.num_samples(),
            decomp.dim()
        )));
    }
    let mut out = x.clone();
    for i in 0..x.nrows() {
        let delta = topk_contribution(decomp, i, k)?;
        for j in 0..x.ncols() {
            out[(i, j)] -= delta[j];
        }
    }
    Ok(out)
}

/// Returns a copy of `bundle` with `spec.layer_index` replaced by its
/// cleaned representations. Provenance is appended to the manifest notes.
pub fn clean_layer(bundle: &ReprBundle, spec: &CleanSpec) -> Result<ReprBundle> {
    spec.validate(bundle)?;
    let l = spec.layer_index;
    let decomp = decompose_layer(bundle, l)?;
    let cleaned = remove_topk(&bundle.layers[l].to_f64(), &decomp, spec.k)?;

    let mut out = bundle.clone();
    out.layers[l] = ReprMatrix::from_dmatrix(&cleaned);
    let record = format!(
        "remove_topk layer={l} K={} source_bundle_hash={}",
        spec.k,
        bundle.content_hash()
    );
    if out.manifest.notes.is_empty() {
        out.manifest.notes = record;
    } else {
        out.manifest.notes = format!("{}\n{record}", out.manifest.notes);
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::decompose_f64;

    #[test]
    fn rank_one_contribution() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let d = decompose_f64(&x, 0).unwrap();
        let delta = topk_contribution(&d, 0, 1).unwrap();
        assert!((delta[0] - 1.0).abs() < 1e-12);
        assert!(delta[1].abs() < 1e-12);
    }

    #[test]
    fn bounds_checked() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let d = decompose_f64(&x, 0).unwrap();
        assert!(topk_contribution(&d, 2, 1).is_err());
        assert!(topk_contribution(&d, 0, 0).is_err());
        assert!(topk_contribution(&d, 0, 2).is_err());
    }

    #[test]
    fn clean_spec_validation() {
        let m = ReprMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0, -1.0]]).unwrap();
        let b = ReprBundle::from_layers("m", "d", vec![m]).unwrap();
        assert!(clean_layer(&b, &CleanSpec::remove_topk(1, 1)).is_err());
        assert!(clean_layer(&b, &CleanSpec::remove_topk(0, 0)).is_err());
        assert!(clean_layer(&b, &CleanSpec::remove_topk(0, 3)).is_err());
        let c = clean_layer(&b, &CleanSpec::remove_topk(0, 1)).unwrap();
        assert!(c.manifest.notes.starts_with("remove_topk layer=0 K=1 source_bundle_hash="));
    }
}
