//! Command-line front end. Every subcommand writes into an output
//! directory, one file at a time via temp file and rename, and finishes
//! with `run_report.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::intervention::{clean_layer, CleanSpec};
use crate::planner::{criticality_report, make_plan_from_losses, make_plan_with, Criterion, LossTable, PlanMode};
use crate::report::{
    cka_csv, correlation_csv, curve_csv, curve_points, heatmap_svg, line_plot_svg, spectra_csv, CurveReport, LineSeries,
    REPORT_SCHEMA_VERSION,
};
use crate::repr_store::{hex_digest, read_bundle, write_bundle, write_file, ReprBundle};
use crate::similarity::{delta_curve, pairwise_cka, CurveEntry, DEFAULT_K};
use crate::spectral::{cca_curve_from_decomps, decompose_bundle};
use crate::stats::{correlate_curves, RankedSeries};
use crate::toymodel::{
    build_loss_table, forward_collect, init_checkpoint, probe_batch, save_checkpoint, synthetic_dataset, train, Task,
    ToyConfig, TrainOptions, DEFAULT_COMPLETION_LEN,
};

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const DEFAULT_TOPK: [usize; 3] = [1, 3, 10];
pub const DEFAULT_M: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "critlayer", version, about = "Layer-wise representation analysis and layer planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    FinetuneSubset,
    FreezeSubset,
}

impl From<ModeArg> for PlanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FinetuneSubset => PlanMode::FinetuneSubset,
            ModeArg::FreezeSubset => PlanMode::FreezeSubset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    DeltaLowest,
    DeltaHighest,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pairwise linear CKA between all layers.
    Cka {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Windowed mean CKA per layer.
    Delta {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Singular-value spectra and windowed top-K CCA curves.
    Spectral {
        #[arg(long)]
        bundle: PathBuf,
        /// Number of leading components; repeat for several curves.
        #[arg(long = "topk")]
        topk: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Removes the leading K components from one layer.
    Remove {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long = "topk")]
        topk: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spearman correlations between layer series (curve JSON, losses.json
    /// or `layer,value` CSV).
    Corr {
        #[arg(required = true, num_args = 2..)]
        series: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Layer plan from a curve report or a loss table.
    Plan {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = DEFAULT_M)]
        m: usize,
        #[arg(long, value_enum, default_value_t = CriterionArg::DeltaLowest)]
        criterion: CriterionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlates a delta curve with substitution losses.
    Criticality {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        losses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a toy base and tuned model and writes bundles, checkpoints
    /// and a loss table.
    Toygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        vocab: usize,
        #[arg(long, default_value_t = 16)]
        seq_len: usize,
        /// Steps on the base task before fine-tuning.
        #[arg(long, default_value_t = 200)]
        pretrain_steps: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 32)]
        probe_samples: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
}

/// Provenance and timing record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output paths relative to the output directory.
    pub outputs: Vec<String>,
    pub parameters: BTreeMap<String, Value>,
    pub timing_ms: u64,
}

struct Run {
    out: PathBuf,
    report: RunReport,
}

impl Run {
    fn new(command: &str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Run {
            out: out.to_path_buf(),
            report: RunReport {
                command: command.into(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                parameters: BTreeMap::new(),
                timing_ms: 0,
            },
        })
    }

    fn param(&mut self, name: &str, value: impl Serialize) {
        self.report.parameters.insert(name.into(), serde_json::to_value(value).expect("parameter serializes"));
    }

    fn input(&mut self, path: &Path, hash: String) {
        self.report.inputs.insert(path.display().to_string(), hash);
    }

    fn file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(name), bytes)?;
        self.report.outputs.push(name.into());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
        bytes.push(b'\n');
        self.file(name, &bytes)
    }

    fn bundle(&mut self, name: &str, bundle: &ReprBundle) -> Result<()> {
        write_bundle(bundle, &self.out.join(name))?;
        self.report.outputs.push(name.into());
        Ok(())
    }

    fn finish(mut self, started: Instant) -> Result<RunReport> {
        self.report.timing_ms = started.elapsed().as_millis() as u64;
        let report = self.report.clone();
        let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
        bytes.push(b'\n');
        write_atomic(&self.out.join(RUN_REPORT_FILE), &bytes)?;
        Ok(report)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    if let Err(e) = write_file(&tmp, bytes) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn file_hash(bytes: &[u8]) -> String {
    hex_digest(&Sha256::digest(bytes))
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

/// A JSON layer series: either a curve report or a loss table.
enum SeriesFile {
    Curve(CurveReport),
    Losses(LossTable),
}

fn read_series_file(path: &Path, bytes: &[u8]) -> Result<SeriesFile> {
    let value: Value = parse_json(bytes, path)?;
    if value.get("base_loss").is_some() {
        let table: LossTable = parse_json(bytes, path)?;
        table.validate()?;
        Ok(SeriesFile::Losses(table))
    } else {
        let curve: CurveReport = parse_json(bytes, path)?;
        curve.validate()?;
        Ok(SeriesFile::Curve(curve))
    }
}

/// `layer,value` CSV with a header row.
fn parse_series_csv(text: &str, path: &Path) -> Result<Vec<CurveEntry>> {
    let bad = |line: usize, why: &str| Error::InvalidSeries(format!("{}:{line}: {why}", path.display()));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "layer,value" => {}
        _ => return Err(bad(1, "expected header `layer,value`")),
    }
    lines
        .map(|(i, l)| {
            let (layer, value) = l.split_once(',').ok_or_else(|| bad(i + 1, "expected two fields"))?;
            Ok(CurveEntry {
                layer: layer.trim().parse().map_err(|_| bad(i + 1, "layer is not an integer"))?,
                value: value.trim().parse().map_err(|_| bad(i + 1, "value is not a number"))?,
            })
        })
        .collect()
}

fn load_series(path: &Path, name: String, bytes: &[u8]) -> Result<RankedSeries> {
    if path.extension().is_some_and(|e| e == "csv") {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::InvalidSeries(format!("{}: not UTF-8", path.display())))?;
        return RankedSeries::from_entries(name, &parse_series_csv(text, path)?);
    }
    match read_series_file(path, bytes)? {
        SeriesFile::Curve(c) => c.to_series(name),
        SeriesFile::Losses(t) => {
            let mut s = crate::planner::loss_change(&t)?.substituted;
            s.name = name;
            Ok(s)
        }
    }
}

fn load_bundle(run: &mut Run, path: &Path) -> Result<ReprBundle> {
    let bundle = read_bundle(path)?;
    run.input(path, bundle.content_hash());
    Ok(bundle)
}

fn cmd_cka(run: &mut Run, bundle_path: &Path) -> Result<()> {
    let bundle = load_bundle(run, bundle_path)?;
    let cka = pairwise_cka(&bundle)?;
    run.file("cka.csv", cka_csv(&cka).as_bytes())?;
    run.json(
        "cka.json",
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "cka",
            "num_layers": cka.num_layers,
            "values": cka.values,
            "source": { "bundle_hash": bundle.content_hash() },
        }),
    )?;
    run.file("cka.svg", heatmap_svg(&cka.values, "Pairwise linear CKA").as_bytes())
}

fn cmd_delta(run: &mut Run, bundle_path: &Path, k: usize) -> Result<()> {
    run.param("k", k);
    let bundle = load_bundle(run, bundle_path)?;
    let curve = delta_curve(&pairwise_cka(&bundle)?, k)?;
    run.file("delta.csv", curve_csv(&curve.entries).as_bytes())?;
    run.json("delta.json", &CurveReport::from_delta(&curve, Some(bundle.content_hash())))?;
    let line = LineSeries {
        name: format!("k = {k}"),
        points: curve_points(&curve.entries),
    };
    run.file("delta.svg", line_plot_svg(&[line], "Windowed mean CKA", "layer", "delta").as_bytes())
}

fn cmd_spectral(run: &mut Run, bundle_path: &Path, topk: &[usize], k: usize) -> Result<()> {
    let topk: Vec<usize> = if topk.is_empty() { DEFAULT_TOPK.to_vec() } else { topk.to_vec() };
    run.param("topk", &topk);
    run.param("k", k);
    let bundle = load_bundle(run, bundle_path)?;
    let hash = bundle.content_hash();
    let decomps = decompose_bundle(&bundle)?;
    run.file("spectra.csv", spectra_csv(&decomps).as_bytes())?;
    let mut lines = Vec::new();
    for &t in &topk {
        let curve = cca_curve_from_decomps(&decomps, t, k)?;
        run.file(&format!("cca_top{t}.csv"), curve_csv(&curve.entries).as_bytes())?;
        run.json(&format!("cca_top{t}.json"), &CurveReport::from_cca(&curve, Some(hash.clone())))?;
        lines.push(LineSeries {
            name: format!("K = {t}"),
            points: curve_points(&curve.entries),
        });
    }
    run.file("cca.svg", line_plot_svg(&lines, "Windowed top-K CCA", "layer", "mean CCA").as_bytes())
}

fn cmd_remove(run: &mut Run, bundle_path: &Path, layer: usize, topk: usize) -> Result<()> {
    run.param("layer", layer);
    run.param("topk", topk);
    let bundle = load_bundle(run, bundle_path)?;
    let cleaned = clean_layer(&bundle, &CleanSpec::remove_topk(layer, topk))?;
    run.bundle("bundle", &cleaned)
}

fn cmd_corr(run: &mut Run, paths: &[PathBuf]) -> Result<()> {
    let mut series = Vec::with_capacity(paths.len());
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for path in paths {
        let bytes = read_file(path)?;
        run.input(path, file_hash(&bytes));
        let stem = path.file_stem().map_or("series".into(), |s| s.to_string_lossy().into_owned());
        let seen = counts.entry(stem.clone()).or_default();
        *seen += 1;
        let name = if *seen == 1 { stem } else { format!("{stem}#{seen}") };
        series.push(load_series(path, name, &bytes)?);
    }
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    let n = series.len();
    let mut matrix = vec![vec![None; n]; n];
    let mut pairs = Vec::new();
    for i in 0..n {
        matrix[i][i] = Some(1.0);
        for j in i + 1..n {
            let entry = correlate_curves(&series[i], &series[j]).map_err(|e| Error::PairFailed {
                left: i,
                right: j,
                source: Box::new(e),
            })?;
            matrix[i][j] = Some(entry.rho);
            matrix[j][i] = Some(entry.rho);
            pairs.push(entry);
        }
    }
    let mean = pairs.iter().map(|p| p.rho).sum::<f64>() / pairs.len() as f64;
    run.file("correlation.csv", correlation_csv(&names, &matrix).as_bytes())?;
    run.json(
        "correlation.json",
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "method": "spearman",
            "series": names,
            "pairs": pairs,
            "mean_rho": mean,
        }),
    )
}

fn cmd_plan(run: &mut Run, curve_path: &Path, mode: PlanMode, m: usize, criterion: CriterionArg) -> Result<()> {
    run.param("mode", mode);
    run.param("m", m);
    let bytes = read_file(curve_path)?;
    run.input(curve_path, file_hash(&bytes));
    let plan = match read_series_file(curve_path, &bytes)? {
        SeriesFile::Losses(table) => {
            run.param("criterion", Criterion::LossChangeHighest);
            make_plan_from_losses(&table, mode, m)?
        }
        SeriesFile::Curve(report) => {
            let criterion = match criterion {
                CriterionArg::DeltaLowest => Criterion::DeltaLowest,
                CriterionArg::DeltaHighest => Criterion::DeltaHighest,
            };
            run.param("criterion", criterion);
            let mut plan = make_plan_with(&report.to_delta_curve()?, mode, criterion, m)?;
            plan.source.bundle_hash = report.source.bundle_hash.clone();
            plan.source.curve_params = json!({ "kind": report.kind, "k": report.k, "topk": report.topk });
            plan
        }
    };
    run.json("plan.json", &plan)
}

fn cmd_criticality(run: &mut Run, curve_path: &Path, losses_path: &Path) -> Result<()> {
    let curve_bytes = read_file(curve_path)?;
    run.input(curve_path, file_hash(&curve_bytes));
    let loss_bytes = read_file(losses_path)?;
    run.input(losses_path, file_hash(&loss_bytes));
    let curve = match read_series_file(curve_path, &curve_bytes)? {
        SeriesFile::Curve(c) => c,
        SeriesFile::Losses(_) => return Err(Error::InvalidSeries(format!("{}: expected a curve report", curve_path.display()))),
    };
    let table = match read_series_file(losses_path, &loss_bytes)? {
        SeriesFile::Losses(t) => t,
        SeriesFile::Curve(_) => return Err(Error::InvalidSeries(format!("{}: expected a loss table", losses_path.display()))),
    };
    let report = criticality_report(&curve.to_delta_curve()?, &table)?;
    run.json(
        "criticality.json",
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "curve": { "kind": curve.kind, "k": curve.k, "topk": curve.topk, "bundle_hash": curve.source.bundle_hash },
            "losses": { "dataset_id": table.dataset_id, "k": table.k, "base_loss": table.base_loss },
            "report": report,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_toygen(run: &mut Run, config: ToyConfig, pretrain_steps: usize, steps: usize, lr: f64, samples: usize, probe_samples: usize, k: usize) -> Result<()> {
    run.param("config", config);
    run.param("pretrain_steps", pretrain_steps);
    run.param("steps", steps);
    run.param("lr", lr);
    run.param("samples", samples);
    run.param("probe_samples", probe_samples);
    run.param("k", k);
    if samples < 1 {
        return Err(Error::out_of_range("samples", samples, ">= 1"));
    }
    crate::similarity::window_range(config.num_layers, k)?;
    let seed = config.seed;
    let completion = DEFAULT_COMPLETION_LEN;
    let pretrain = synthetic_dataset(&config, Task::Progression, samples, completion, seed.wrapping_add(1));
    let finetune = synthetic_dataset(&config, Task::Periodic, samples, completion, seed.wrapping_add(2));
    let test = synthetic_dataset(&config, Task::Periodic, samples.div_ceil(2), completion, seed.wrapping_add(3));
    let probe = probe_batch(&config, probe_samples, seed.wrapping_add(4));

    let opts = |steps| TrainOptions {
        steps,
        lr,
        ..TrainOptions::default()
    };
    let base = train(&init_checkpoint(&config)?, &pretrain, &opts(pretrain_steps), None)?;
    let tuned = train(&base, &finetune, &opts(steps), None)?;

    let (base_bundle, _) = forward_collect(&base, &probe)?;
    let (tuned_bundle, _) = forward_collect(&tuned, &probe)?;
    let relabel = |mut b: ReprBundle, model: &str| {
        b.manifest.model_id = format!("{}:{model}", b.manifest.model_id);
        b.manifest.dataset_id = format!("probe-seed{}-n{probe_samples}", seed.wrapping_add(4));
        b
    };
    let table = build_loss_table(&tuned, &base, &test, k, &format!("periodic-seed{}", seed.wrapping_add(3)))?;

    save_checkpoint(&base, &run.out.join("base"))?;
    run.report.outputs.push("base".into());
    save_checkpoint(&tuned, &run.out.join("tuned"))?;
    run.report.outputs.push("tuned".into());
    run.bundle("base_bundle", &relabel(base_bundle, "base"))?;
    run.bundle("bundle", &relabel(tuned_bundle, "tuned"))?;
    run.json("losses.json", &table)
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<RunReport>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string().trim_end().to_string()))?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<RunReport> {
    let started = Instant::now();
    match command {
        Command::Cka { bundle, out } => {
            let mut run = Run::new("cka", &out)?;
            cmd_cka(&mut run, &bundle)?;
            run.finish(started)
        }
        Command::Delta { bundle, k, out } => {
            let mut run = Run::new("delta", &out)?;
            cmd_delta(&mut run, &bundle, k)?;
            run.finish(started)
        }
        Command::Spectral { bundle, topk, k, out } => {
            let mut run = Run::new("spectral", &out)?;
            cmd_spectral(&mut run, &bundle, &topk, k)?;
            run.finish(started)
        }
        Command::Remove { bundle, layer, topk, out } => {
            let mut run = Run::new("remove", &out)?;
            cmd_remove(&mut run, &bundle, layer, topk)?;
            run.finish(started)
        }
        Command::Corr { series, out } => {
            let mut run = Run::new("corr", &out)?;
            cmd_corr(&mut run, &series)?;
            run.finish(started)
        }
        Command::Plan {
            curve,
            mode,
            m,
            criterion,
            out,
        } => {
            let mut run = Run::new("plan", &out)?;
            cmd_plan(&mut run, &curve, mode.into(), m, criterion)?;
            run.finish(started)
        }
        Command::Criticality { curve, losses, out } => {
            let mut run = Run::new("criticality", &out)?;
            cmd_criticality(&mut run, &curve, &losses)?;
            run.finish(started)
        }
        Command::Toygen {
            out,
            seed,
            layers,
            hidden,
            heads,
            vocab,
            seq_len,
            pretrain_steps,
            steps,
            lr,
            samples,
            probe_samples,
            k,
        } => {
            let config = ToyConfig {
                num_layers: layers,
                hidden_size: hidden,
                num_heads: heads,
                vocab_size: vocab,
                seq_len,
                seed,
            };
            let mut run = Run::new("toygen", &out)?;
            cmd_toygen(&mut run, config, pretrain_steps, steps, lr, samples, probe_samples, k)?;
            run.finish(started)
        }
    }
}

/// Machine-readable failure record for standard error.
pub fn error_record(err: &Error) -> Value {
    json!({ "error": { "kind": err.kind(), "message": err.to_string() } })
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        2
    } else {
        1
    }
}

/// Entry point for the binary: runs, reports errors on stderr and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = Error::Usage(e.to_string().trim_end().to_string());
            eprintln!("{}", error_record(&err));
            return 1;
        }
    };
    match execute(cli.command) {
        Ok(_) => 0,
        Err(err) => {
            eprintln!("{}", error_record(&err));
            exit_code(&err)
        }
    }
}
