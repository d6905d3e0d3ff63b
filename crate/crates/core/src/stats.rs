//! Spearman rank correlation over layer-labelled series.
//!
//! Series are aligned on the intersection of their layer labels before
//! ranking; ties receive average ranks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::CurveEntry;

/// Values indexed by layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSeries {
    pub name: String,
    pub labels: Vec<usize>,
    pub values: Vec<f64>,
}

impl RankedSeries {
    pub fn new(name: impl Into<String>, labels: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let s = RankedSeries {
            name: name.into(),
            labels,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_entries(name: impl Into<String>, entries: &[CurveEntry]) -> Result<Self> {
        RankedSeries::new(
            name,
            entries.iter().map(|e| e.layer).collect(),
            entries.iter().map(|e| e.value).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.values.len() {
            return Err(Error::InvalidSeries(format!(
                "`{}` has {} labels but {} values",
                self.name,
                self.labels.len(),
                self.values.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.labels.iter().find(|l| !seen.insert(**l)) {
            return Err(Error::InvalidSeries(format!("`{}` repeats layer {dup}", self.name)));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("`{}` has a non-finite value", self.name)));
        }
        Ok(())
    }

    pub fn negated(&self) -> Self {
        RankedSeries {
            name: format!("-{}", self.name),
            labels: self.labels.clone(),
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pairs of values sharing a label, in ascending label order.
fn align(a: &RankedSeries, b: &RankedSeries) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let lookup: BTreeMap<usize, f64> = b.labels.iter().copied().zip(b.values.iter().copied()).collect();
    let mut pairs: Vec<(usize, f64, f64)> = a
        .labels
        .iter()
        .zip(&a.values)
        .filter_map(|(l, &va)| lookup.get(l).map(|&vb| (*l, va, vb)))
        .collect();
    pairs.sort_by_key(|p| p.0);
    let labels = pairs.iter().map(|p| p.0).collect();
    let xs = pairs.iter().map(|p| p.1).collect();
    let ys = pairs.iter().map(|p| p.2).collect();
    (labels, xs, ys)
}

fn pearson(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy, sxx, syy)
}

fn spearman_aligned(a: &RankedSeries, b: &RankedSeries) -> Result<(f64, Vec<usize>)> {
    a.validate()?;
    b.validate()?;
    let (labels, xs, ys) = align(a, b);
    if labels.len() < 3 {
        return Err(Error::InsufficientOverlap(labels.len()));
    }
    let (rx, ry) = (average_ranks(&xs), average_ranks(&ys));
    let (sxy, sxx, syy) = pearson(&rx, &ry);
    if sxx == 0.0 {
        return Err(Error::ZeroRankVariance(a.name.clone()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroRankVariance(b.name.clone()));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok((rho, labels))
}

/// Spearman's rho on the common layers of `a` and `b`.
pub fn spearman(a: &RankedSeries, b: &RankedSeries) -> Result<f64> {
    spearman_aligned(a, b).map(|(rho, _)| rho)
}

/// Mean Spearman correlation over all unordered pairs of `series`.
pub fn pairwise_mean_correlation(series: &[RankedSeries]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InvalidSeries(format!("need at least 2 series, got {}", series.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            total += spearman(&series[i], &series[j]).map_err(|e| Error::PairFailed {
                left: i,
                right: j,
                source: Box::new(e),
            })?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub x_name: String,
    pub y_name: String,
    pub rho: f64,
    pub n: usize,
    /// First and last common layer.
    pub aligned_range: (usize, usize),
}

pub fn correlate_curves(x: &RankedSeries, y: &RankedSeries) -> Result<CorrelationEntry> {
    let (rho, labels) = spearman_aligned(x, y)?;
    Ok(CorrelationEntry {
        x_name: x.name.clone(),
        y_name: y.name.clone(),
        rho,
        n: labels.len(),
        aligned_range: (labels[0], labels[labels.len() - 1]),
    })
}
