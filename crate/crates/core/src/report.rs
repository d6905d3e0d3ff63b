//! Serialized analysis outputs: CSV tables, JSON curve reports and small
//! SVG figures.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{CkaMatrix, CurveEntry, DeltaCurve};
use crate::spectral::{CcaCurve, SpectralDecomp};
use crate::stats::RankedSeries;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Formats `x` with 9 significant digits, like C's `%.9g`.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Square matrix with layer indices as the header row and first column.
pub fn cka_csv(cka: &CkaMatrix) -> String {
    let mut out = String::from("layer");
    for j in 0..cka.num_layers {
        write!(out, ",{j}").unwrap();
    }
    out.push('\n');
    for (i, row) in cka.values.iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in row {
            write!(out, ",{}", format_sig(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn curve_csv(entries: &[CurveEntry]) -> String {
    let mut out = String::from("layer,value\n");
    for e in entries {
        writeln!(out, "{},{}", e.layer, format_sig(e.value)).unwrap();
    }
    out
}

/// One row per retained singular value of every layer.
pub fn spectra_csv(decomps: &[SpectralDecomp]) -> String {
    let mut out = String::from("layer,index,singular_value\n");
    for d in decomps {
        for (i, s) in d.singular_values.iter().enumerate() {
            writeln!(out, "{},{i},{}", d.layer_index, format_sig(*s)).unwrap();
        }
    }
    out
}

/// Symmetric correlation table with series names as headers. Cells whose
/// pair could not be correlated are left empty.
pub fn correlation_csv(names: &[String], rho: &[Vec<Option<f64>>]) -> String {
    let mut out = String::from("series");
    for n in names {
        write!(out, ",{}", csv_field(n)).unwrap();
    }
    out.push('\n');
    for (n, row) in names.iter().zip(rho) {
        out.push_str(&csv_field(n));
        for v in row {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format_sig(*v));
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Delta,
    Cca,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportSource {
    pub bundle_hash: Option<String>,
}

/// JSON form of a windowed layer curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveReport {
    pub schema_version: u32,
    pub kind: CurveKind,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
    pub valid_range: (usize, usize),
    pub aggregate: String,
    pub entries: Vec<CurveEntry>,
    pub source: ReportSource,
}

impl CurveReport {
    pub fn from_delta(curve: &DeltaCurve, bundle_hash: Option<String>) -> Self {
        CurveReport {
            schema_version: REPORT_SCHEMA_VERSION,
            kind: CurveKind::Delta,
            k: curve.k,
            topk: None,
            valid_range: curve.valid_range,
            aggregate: "mean".into(),
            entries: curve.entries.clone(),
            source: ReportSource { bundle_hash },
        }
    }

    pub fn from_cca(curve: &CcaCurve, bundle_hash: Option<String>) -> Self {
        CurveReport {
            schema_version: REPORT_SCHEMA_VERSION,
            kind: CurveKind::Cca,
            k: curve.k,
            topk: Some(curve.topk),
            valid_range: curve.valid_range,
            aggregate: "mean".into(),
            entries: curve.entries.clone(),
            source: ReportSource { bundle_hash },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidSeries(format!("unsupported curve schema_version {}", self.schema_version)));
        }
        if (self.kind == CurveKind::Cca) != self.topk.is_some() {
            return Err(Error::InvalidSeries("topk is required for cca curves and only for them".into()));
        }
        let (lo, hi) = self.valid_range;
        let layers: Vec<usize> = self.entries.iter().map(|e| e.layer).collect();
        if lo > hi || layers != (lo..=hi).collect::<Vec<_>>() {
            return Err(Error::InvalidSeries(format!("curve entries do not cover valid_range [{lo}, {hi}]")));
        }
        if let Some(e) = self.entries.iter().find(|e| !e.value.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite value at layer {}", e.layer)));
        }
        Ok(())
    }

    /// The curve in the form layer planning consumes; CCA curves rank the
    /// same way as delta curves.
    pub fn to_delta_curve(&self) -> Result<DeltaCurve> {
        self.validate()?;
        Ok(DeltaCurve {
            k: self.k,
            entries: self.entries.clone(),
            valid_range: self.valid_range,
        })
    }

    pub fn default_name(&self) -> String {
        match self.topk {
            Some(t) => format!("cca_top{t}_k{}", self.k),
            None => format!("delta_k{}", self.k),
        }
    }

    pub fn to_series(&self, name: impl Into<String>) -> Result<RankedSeries> {
        self.validate()?;
        RankedSeries::from_entries(name, &self.entries)
    }
}

const SVG_FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn svg_open(width: f64, height: f64, title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    writeln!(s, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" {SVG_FONT} font-size=\"13\">{}</text>",
        width / 2.0,
        escape(title)
    )
    .unwrap();
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear white-to-navy ramp over `[lo, hi]`.
fn heat_color(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 1.0 };
    let ch = |from: f64, to: f64| (from + (to - from) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(255.0, 8.0), ch(255.0, 48.0), ch(255.0, 107.0))
}

/// Heatmap of a square matrix with a colour scale fixed to `[0, 1]`.
pub fn heatmap_svg(values: &[Vec<f64>], title: &str) -> String {
    let n = values.len();
    let cell = (360.0 / n.max(1) as f64).clamp(6.0, 32.0);
    let (left, top) = (40.0, 32.0);
    let side = cell * n as f64;
    let mut s = svg_open(left + side + 70.0, top + side + 30.0, title);
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\"/>",
                left + j as f64 * cell,
                top + i as f64 * cell,
                heat_color(*v, 0.0, 1.0)
            )
            .unwrap();
        }
    }
    let step = n.div_ceil(16).max(1);
    for i in (0..n).step_by(step) {
        let mid = i as f64 * cell + cell / 2.0;
        writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" {SVG_FONT}>{i}</text>", left - 4.0, top + mid + 4.0).unwrap();
        writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {SVG_FONT}>{i}</text>", left + mid, top + side + 14.0).unwrap();
    }
    let bar_x = left + side + 16.0;
    for b in 0..10 {
        let v = 1.0 - b as f64 / 9.0;
        writeln!(
            s,
            "<rect x=\"{bar_x:.2}\" y=\"{:.2}\" width=\"12\" height=\"{:.2}\" fill=\"{}\"/>",
            top + b as f64 * side / 10.0,
            side / 10.0,
            heat_color(v, 0.0, 1.0)
        )
        .unwrap();
    }
    writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" {SVG_FONT}>1</text>", bar_x + 16.0, top + 10.0).unwrap();
    writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" {SVG_FONT}>0</text>", bar_x + 16.0, top + side).unwrap();
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f4e9c", "#c0392b", "#27884a", "#8e44ad", "#d68910", "#555555"];

/// Line plot with shared axes and a legend.
pub fn line_plot_svg(series: &[LineSeries], title: &str, x_label: &str, y_label: &str) -> String {
    let (width, height) = (520.0, 340.0);
    let (left, right, top, bottom) = (60.0, 130.0, 32.0, 44.0);
    let (pw, ph) = (width - left - right, height - top - bottom);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = y0.abs().max(1.0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = svg_open(width, height, title);
    writeln!(
        s,
        "<path d=\"M{left:.2},{top:.2} V{:.2} H{:.2}\" fill=\"none\" stroke=\"black\"/>",
        top + ph,
        left + pw
    )
    .unwrap();
    for t in 0..=4 {
        let y = y0 + (y1 - y0) * t as f64 / 4.0;
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" {SVG_FONT}>{}</text>",
            left - 4.0,
            py(y) + 4.0,
            format_tick(y)
        )
        .unwrap();
        let x = x0 + (x1 - x0) * t as f64 / 4.0;
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {SVG_FONT}>{}</text>",
            px(x),
            top + ph + 14.0,
            format_tick(x)
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {SVG_FONT}>{}</text>",
        left + pw / 2.0,
        height - 8.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        s,
        "<text transform=\"translate(14,{:.2}) rotate(-90)\" text-anchor=\"middle\" {SVG_FONT}>{}</text>",
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();

    for (i, line) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = line.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", pts.join(" ")).unwrap();
        for &(x, y) in &line.points {
            writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>", px(x), py(y)).unwrap();
        }
        let ly = top + 12.0 + 16.0 * i as f64;
        let lx = left + pw + 12.0;
        writeln!(s, "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>", lx + 16.0).unwrap();
        writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" {SVG_FONT}>{}</text>", lx + 20.0, ly + 4.0, escape(&line.name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    trim_zeros(s)
}

pub fn curve_points(entries: &[CurveEntry]) -> Vec<(f64, f64)> {
    entries.iter().map(|e| (e.layer as f64, e.value)).collect()
}
