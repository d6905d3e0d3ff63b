//! Centering, linear CKA, the pairwise layer-similarity matrix, and the
//! windowed average-similarity curve.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr_store::{ReprBundle, ReprMatrix};

/// Default half-width of the local layer window.
pub const DEFAULT_K: usize = 2;

/// Subtracts the column means: `X - (1/N) 1 1^T X`.
pub fn center(x: &ReprMatrix) -> Result<DMatrix<f64>> {
    if let Some((row, col)) = x.first_non_finite() {
        return Err(Error::NonFinite { layer: 0, row, col });
    }
    center_f64(&x.to_f64())
}

pub fn center_f64(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        let i = x.iter().position(|v| !v.is_finite()).unwrap();
        // column-major storage
        return Err(Error::NonFinite {
            layer: 0,
            row: i % n,
            col: i / n,
        });
    }
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

/// A centered layer with its cached self-similarity norm `||X~^T X~||_F`.
struct CenteredLayer {
    centered: DMatrix<f64>,
    self_norm: f64,
}

impl CenteredLayer {
    fn new(x: &DMatrix<f64>) -> Result<Option<Self>> {
        let centered = center_f64(x)?;
        let scale = x.norm().max(f64::MIN_POSITIVE);
        if centered.norm() <= 1e-12 * scale {
            return Ok(None);
        }
        let self_norm = (centered.transpose() * &centered).norm();
        Ok(Some(CenteredLayer { centered, self_norm }))
    }

    fn cka(&self, other: &CenteredLayer) -> f64 {
        let cross = other.centered.transpose() * &self.centered;
        cross.norm_squared() / (self.self_norm * other.self_norm)
    }
}

/// Linear CKA between two representation matrices sharing sample rows.
pub fn linear_cka(x1: &ReprMatrix, x2: &ReprMatrix) -> Result<f64> {
    linear_cka_f64(&x1.to_f64(), &x2.to_f64())
}

pub fn linear_cka_f64(x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<f64> {
    if x1.nrows() != x2.nrows() {
        return Err(Error::RowMismatch {
            left: x1.nrows(),
            right: x2.nrows(),
        });
    }
    let a = CenteredLayer::new(x1)?.ok_or(Error::ZeroVariance("first argument"))?;
    let b = CenteredLayer::new(x2)?.ok_or(Error::ZeroVariance("second argument"))?;
    Ok(a.cka(&b))
}

/// Symmetric `L x L` matrix of pairwise linear CKA values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub num_layers: usize,
    /// Row-major `num_layers x num_layers`.
    pub values: Vec<Vec<f64>>,
}

impl CkaMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Builds a matrix from explicit rows after checking its invariants.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        let l = values.len();
        for (i, row) in values.iter().enumerate() {
            if row.len() != l {
                return Err(Error::DimensionMismatch(format!("CKA row {i} has {} entries, expected {l}", row.len())));
            }
            if (row[i] - 1.0).abs() > 1e-8 {
                return Err(Error::Numeric(format!("CKA diagonal entry {i} = {} is not 1", row[i])));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(-1e-8..=1.0 + 1e-8).contains(&v) {
                    return Err(Error::Numeric(format!("CKA entry ({i},{j}) = {v} outside [0,1]")));
                }
                if (v - values[j][i]).abs() > 1e-10 {
                    return Err(Error::Numeric(format!("CKA matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(CkaMatrix { num_layers: l, values })
    }
}

/// Pairwise linear CKA over every layer pair of `bundle`.
pub fn pairwise_cka(bundle: &ReprBundle) -> Result<CkaMatrix> {
    let layers = bundle
        .layers
        .par_iter()
        .enumerate()
        .map(|(l, m)| CenteredLayer::new(&m.to_f64())?.ok_or(Error::DegenerateLayer(l)))
        .collect::<Result<Vec<_>>>()?;
    let n = layers.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let computed: Vec<f64> = pairs.par_iter().map(|&(i, j)| layers[i].cka(&layers[j])).collect();
    let mut values = vec![vec![0.0; n]; n];
    for (&(i, j), &v) in pairs.iter().zip(&computed) {
        values[i][j] = v;
        values[j][i] = v;
    }
    Ok(CkaMatrix { num_layers: n, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub layer: usize,
    pub value: f64,
}

/// Average similarity of each layer to its `2k` nearest neighbours.
/// Layers closer than `k` to either end are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCurve {
    pub k: usize,
    pub entries: Vec<CurveEntry>,
    pub valid_range: (usize, usize),
}

/// Checks `1 <= k <= (L-1)/2` and returns the valid center range.
pub fn window_range(num_layers: usize, k: usize) -> Result<(usize, usize)> {
    let max_k = num_layers.saturating_sub(1) / 2;
    if k < 1 || k > max_k {
        return Err(Error::out_of_range("k", k, format!("1..={max_k} for {num_layers} layers")));
    }
    Ok((k, num_layers - 1 - k))
}

/// Mean over the `2k` off-center entries of a windowed layer function.
pub(crate) fn window_mean(center: usize, k: usize, mut f: impl FnMut(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    for j in center - k..=center + k {
        if j != center {
            sum += f(j);
        }
    }
    sum / (2 * k) as f64
}

pub fn delta_curve(cka: &CkaMatrix, k: usize) -> Result<DeltaCurve> {
    let (lo, hi) = window_range(cka.num_layers, k)?;
    let entries = (lo..=hi)
        .map(|l| CurveEntry {
            layer: l,
            value: window_mean(l, k, |j| cka.get(l, j)),
        })
        .collect();
    Ok(DeltaCurve {
        k,
        entries,
        valid_range: (lo, hi),
    })
}

/// The `m` layers with the smallest values, ascending; ties go to the lower
/// layer index.
pub fn rank_critical_layers(curve: &DeltaCurve, m: usize) -> Result<Vec<usize>> {
    rank_entries(&curve.entries, m, false)
}

/// The `m` layers with the largest values, descending; ties go to the lower
/// layer index.
pub fn rank_noncritical_layers(curve: &DeltaCurve, m: usize) -> Result<Vec<usize>> {
    rank_entries(&curve.entries, m, true)
}

pub(crate) fn rank_entries(entries: &[CurveEntry], m: usize, largest: bool) -> Result<Vec<usize>> {
    if m < 1 || m > entries.len() {
        return Err(Error::out_of_range("m", m, format!("1..={}", entries.len())));
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| {
        let by_value = if largest {
            b.value.total_cmp(&a.value)
        } else {
            a.value.total_cmp(&b.value)
        };
        by_value.then(a.layer.cmp(&b.layer))
    });
    Ok(sorted.into_iter().take(m).map(|e| e.layer).collect())
}
