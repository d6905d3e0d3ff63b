//! Layer plans for selective fine-tuning and freeze-based defense, and
//! substitution loss statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{rank_entries, CurveEntry, DeltaCurve};
use crate::stats::{correlate_curves, RankedSeries};

pub const PLAN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub layer: usize,
    pub loss: f64,
}

/// Test loss after substituting each layer window back to its
/// pre-fine-tuning parameters. Mirrors `losses.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub dataset_id: String,
    pub base_loss: f64,
    pub k: usize,
    pub entries: Vec<LossEntry>,
}

impl LossTable {
    pub fn validate(&self) -> Result<()> {
        if !self.base_loss.is_finite() || self.base_loss < 0.0 {
            return Err(Error::InvalidLossTable(format!("base_loss {} must be finite and >= 0", self.base_loss)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.layer) {
                return Err(Error::InvalidLossTable(format!("layer {} appears twice", e.layer)));
            }
            if !e.loss.is_finite() || e.loss < 0.0 {
                return Err(Error::InvalidLossTable(format!("loss {} at layer {} must be finite and >= 0", e.loss, e.layer)));
            }
        }
        Ok(())
    }

    fn as_curve_entries(&self, offset: f64) -> Vec<CurveEntry> {
        self.entries
            .iter()
            .map(|e| CurveEntry {
                layer: e.layer,
                value: e.loss - offset,
            })
            .collect()
    }
}

/// `delta_loss[l] = substituted[l] - base_loss`, alongside the raw
/// substituted losses (the two rank identically).
#[derive(Debug, Clone, PartialEq)]
pub struct LossChange {
    pub delta_loss: RankedSeries,
    pub substituted: RankedSeries,
}

pub fn loss_change(table: &LossTable) -> Result<LossChange> {
    table.validate()?;
    Ok(LossChange {
        delta_loss: RankedSeries::from_entries(format!("{}:loss_change", table.dataset_id), &table.as_curve_entries(table.base_loss))?,
        substituted: RankedSeries::from_entries(format!("{}:substituted_loss", table.dataset_id), &table.as_curve_entries(0.0))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    FinetuneSubset,
    FreezeSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    DeltaLowest,
    DeltaHighest,
    LossChangeHighest,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanSource {
    pub bundle_hash: Option<String>,
    pub curve_params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub schema_version: u32,
    pub mode: PlanMode,
    pub criterion: Criterion,
    pub k: usize,
    pub m: usize,
    pub layers: Vec<usize>,
    pub source: PlanSource,
    /// Set when fewer than `2m` candidate layers exist, so critical and
    /// non-critical selections may overlap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl LayerPlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.layers.iter().find(|l| !seen.insert(**l)) {
            return Err(Error::InvalidSeries(format!("plan repeats layer {dup}")));
        }
        if self.layers.len() != self.m {
            return Err(Error::InvalidSeries(format!(
                "plan lists {} layers but m = {}",
                self.layers.len(),
                self.m
            )));
        }
        Ok(())
    }
}

fn overlap_warning(candidates: usize, m: usize) -> Option<String> {
    (2 * m > candidates).then(|| format!("only {candidates} candidate layers for m = {m}; critical and non-critical selections can overlap"))
}

/// Plan selecting the lowest-delta layers, for either mode.
pub fn make_plan(curve: &DeltaCurve, mode: PlanMode, m: usize) -> Result<LayerPlan> {
    make_plan_with(curve, mode, Criterion::DeltaLowest, m)
}

pub fn make_plan_with(curve: &DeltaCurve, mode: PlanMode, criterion: Criterion, m: usize) -> Result<LayerPlan> {
    let layers = match criterion {
        Criterion::DeltaLowest => rank_entries(&curve.entries, m, false)?,
        Criterion::DeltaHighest => rank_entries(&curve.entries, m, true)?,
        Criterion::LossChangeHighest => {
            return Err(Error::InvalidSeries(
                "loss_change_highest plans are built from a loss table".into(),
            ))
        }
    };
    Ok(LayerPlan {
        schema_version: PLAN_SCHEMA_VERSION,
        mode,
        criterion,
        k: curve.k,
        m,
        layers,
        source: PlanSource {
            bundle_hash: None,
            curve_params: serde_json::json!({ "kind": "delta", "k": curve.k }),
        },
        warning: overlap_warning(curve.entries.len(), m),
    })
}

/// Plan selecting the layers whose substitution raised the loss most.
pub fn make_plan_from_losses(table: &LossTable, mode: PlanMode, m: usize) -> Result<LayerPlan> {
    table.validate()?;
    let entries = table.as_curve_entries(table.base_loss);
    Ok(LayerPlan {
        schema_version: PLAN_SCHEMA_VERSION,
        mode,
        criterion: Criterion::LossChangeHighest,
        k: table.k,
        m,
        layers: rank_entries(&entries, m, true)?,
        source: PlanSource {
            bundle_hash: None,
            curve_params: serde_json::json!({ "kind": "losses", "dataset_id": table.dataset_id, "k": table.k }),
        },
        warning: overlap_warning(entries.len(), m),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapAt {
    pub m: usize,
    pub critical_by_delta: Vec<usize>,
    pub critical_by_loss: Vec<usize>,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub rho: f64,
    pub n: usize,
    pub aligned_range: (usize, usize),
    /// Alignment rule used before correlating.
    pub alignment: String,
    /// One entry per requested `m` that fits in the aligned layer set.
    pub overlaps: Vec<OverlapAt>,
}

pub const REPORT_OVERLAP_SIZES: [usize; 2] = [3, 5];

/// Correlates delta against substituted loss and compares the top-m
/// critical layers chosen by each criterion on their common layers.
pub fn criticality_report(curve: &DeltaCurve, table: &LossTable) -> Result<CriticalityReport> {
    criticality_report_at(curve, table, &REPORT_OVERLAP_SIZES)
}

pub fn criticality_report_at(curve: &DeltaCurve, table: &LossTable, sizes: &[usize]) -> Result<CriticalityReport> {
    let delta = RankedSeries::from_entries("delta", &curve.entries)?;
    let losses = loss_change(table)?.substituted;
    let corr = correlate_curves(&delta, &losses)?;

    let common: std::collections::BTreeSet<usize> = delta.labels.iter().filter(|l| losses.labels.contains(l)).copied().collect();
    let delta_common: Vec<CurveEntry> = curve.entries.iter().filter(|e| common.contains(&e.layer)).copied().collect();
    let loss_common: Vec<CurveEntry> = table
        .as_curve_entries(table.base_loss)
        .into_iter()
        .filter(|e| common.contains(&e.layer))
        .collect();

    let mut overlaps = Vec::new();
    for &m in sizes {
        if m == 0 || m > common.len() {
            continue;
        }
        let by_delta = rank_entries(&delta_common, m, false)?;
        let by_loss = rank_entries(&loss_common, m, true)?;
        let overlap = by_delta.iter().filter(|l| by_loss.contains(l)).count();
        overlaps.push(OverlapAt {
            m,
            critical_by_delta: by_delta,
            critical_by_loss: by_loss,
            overlap,
        });
    }

    Ok(CriticalityReport {
        rho: corr.rho,
        n: corr.n,
        aligned_range: corr.aligned_range,
        alignment: "intersection of layer labels".into(),
        overlaps,
    })
}
