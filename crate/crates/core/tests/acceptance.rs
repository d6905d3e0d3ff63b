//! Acceptance suite. Runs every primary criterion, prints one line each and
//! exits non-zero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use critlayer::intervention::remove_topk;
use critlayer::planner::{criticality_report_at, Criterion, LayerPlan, LossEntry, LossTable, PlanMode, PlanSource};
use critlayer::repr_store::{read_bundle, write_bundle, ReprBundle};
use critlayer::similarity::{delta_curve, linear_cka_f64, pairwise_cka, CurveEntry, DeltaCurve};
use critlayer::spectral::{cca_blocks, decompose_f64, linear_cka_from_decomps, principal_features};
use critlayer::stats::{average_ranks, spearman, RankedSeries};
use critlayer::toymodel::*;
use critlayer::Error;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);
type Corruption = (&'static str, Box<dyn Fn(&Path)>, fn(&Error) -> bool);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cka_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(3..=50);
        let x_dim = rng.random_range(1..=16);
        let x = random_matrix(&mut rng, n, x_dim);
        let y_dim = rng.random_range(1..=16);
        let y = random_matrix(&mut rng, n, y_dim);
        let got = linear_cka_f64(&x, &y).map_err(|e| e.to_string())?;
        worst = worst.max((got - gram_cka(&x, &y)).abs());
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-10, || format!("max |diff| = {worst:e}"))?;
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("max |diff| = {worst:.1e}, {elapsed:.2?}"))
}

fn cka_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut self_err, mut orth_err, mut scale_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let n = rng.random_range(4..=40);
        let d = rng.random_range(1..=12);
        let x = random_matrix(&mut rng, n, d);
        let y_dim = rng.random_range(1..=12);
        let y = random_matrix(&mut rng, n, y_dim);
        let cka = |a: &DMatrix<f64>, b: &DMatrix<f64>| linear_cka_f64(a, b).map_err(|e| e.to_string());
        let base = cka(&x, &y)?;
        self_err = self_err.max((cka(&x, &x)? - 1.0).abs());
        let q = random_orthogonal(&mut rng, d);
        orth_err = orth_err.max((cka(&(&x * q), &y)? - base).abs());
        let c = rng.random_range(0.01..100.0);
        scale_err = scale_err.max((cka(&(&x * c), &y)? - base).abs());
    }
    check(self_err <= 1e-10, || format!("self-similarity off by {self_err:e}"))?;
    check(orth_err <= 1e-8, || format!("orthogonal transform moved CKA by {orth_err:e}"))?;
    check(scale_err <= 1e-8, || format!("scaling moved CKA by {scale_err:e}"))?;
    Ok(format!("self {self_err:.1e}, orthogonal {orth_err:.1e}, scale {scale_err:.1e}"))
}

fn delta_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for num_layers in [7, 9, 12] {
        let bundle = random_bundle(&mut rng, num_layers, 20, 10);
        let cka = pairwise_cka(&bundle).map_err(|e| e.to_string())?;
        for k in 1..=3 {
            let curve = delta_curve(&cka, k).map_err(|e| e.to_string())?;
            let hi = num_layers - 1 - k;
            check(curve.valid_range == (k, hi), || format!("L={num_layers} k={k}: range {:?}", curve.valid_range))?;
            let layers: Vec<usize> = curve.entries.iter().map(|e| e.layer).collect();
            check(layers == (k..=hi).collect::<Vec<_>>(), || format!("L={num_layers} k={k}: layers {layers:?}"))?;
            for e in &curve.entries {
                let neighbours = (e.layer - k..=e.layer + k).filter(|&j| j != e.layer);
                let direct = neighbours.map(|j| cka.values[e.layer][j]).sum::<f64>() / (2 * k) as f64;
                worst = worst.max((e.value - direct).abs());
            }
        }
    }
    check(worst <= 1e-12, || format!("max |diff| = {worst:e}"))?;
    Ok(format!("max |diff| = {worst:.1e} over k = 1, 2, 3"))
}

fn spectral_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut recon, mut eig, mut cka): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..60 {
        let d = rng.random_range(1..=12);
        // a third of the trials are wide, so centering caps the rank
        let n = if trial % 3 == 0 { rng.random_range(2..=d + 1) } else { rng.random_range(d + 2..=40) };
        let x = random_matrix(&mut rng, n, d);
        let y_dim = rng.random_range(1..=12);
        let y = random_matrix(&mut rng, n, y_dim);
        let dx = decompose_f64(&x, 0).map_err(|e| e.to_string())?;
        let dy = decompose_f64(&y, 1).map_err(|e| e.to_string())?;
        let xc = centered(&x);

        recon = recon.max((dx.reconstruct(dx.rank) - &xc).norm() / xc.norm());

        let gram = if n <= d { &xc * xc.transpose() } else { xc.transpose() * &xc };
        let oracle = jacobi_eigenvalues(&gram);
        check(dx.rank <= oracle.len(), || format!("rank {} exceeds {}", dx.rank, oracle.len()))?;
        for (s, l) in dx.singular_values.iter().zip(&oracle) {
            eig = eig.max((s - l.max(0.0).sqrt()).abs());
        }

        let via_decomp = linear_cka_from_decomps(&dx, &dy).map_err(|e| e.to_string())?;
        let direct = linear_cka_f64(&x, &y).map_err(|e| e.to_string())?;
        cka = cka.max((via_decomp - direct).abs());
    }
    check(recon < 1e-6, || format!("relative residual {recon:e}"))?;
    check(eig <= 1e-8, || format!("singular values off the eigen oracle by {eig:e}"))?;
    check(cka <= 1e-8, || format!("decomposition CKA off by {cka:e}"))?;
    Ok(format!("residual {recon:.1e}, eigen {eig:.1e}, CKA {cka:.1e}"))
}

fn cca_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut same, mut orth, mut mix): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let n = 24;
        let k = rng.random_range(1..=4);
        let x = random_matrix(&mut rng, n, 8);
        let feats = principal_features(&decompose_f64(&x, 0).map_err(|e| e.to_string())?, k).map_err(|e| e.to_string())?;
        let a = feats.features;
        same = same.max((cca_blocks(&a, &a).map_err(|e| e.to_string())? - 1.0).abs());

        let q = random_orthogonal(&mut rng, n);
        let left = q.columns(0, k) * random_matrix(&mut rng, k, k);
        let right = q.columns(k, k) * random_matrix(&mut rng, k, k);
        orth = orth.max(cca_blocks(&left, &right).map_err(|e| e.to_string())?.abs());

        let b_dim = rng.random_range(1..=4);
        let b = random_matrix(&mut rng, n, b_dim);
        let m = loop {
            let m = random_matrix(&mut rng, k, k);
            if m.determinant().abs() > 0.1 {
                break m;
            }
        };
        let base = cca_blocks(&a, &b).map_err(|e| e.to_string())?;
        let mixed = cca_blocks(&(&a * m), &b).map_err(|e| e.to_string())?;
        mix = mix.max((base - mixed).abs());
    }
    check(same <= 1e-8, || format!("identical subspaces off 1 by {same:e}"))?;
    check(orth <= 1e-8, || format!("orthogonal subspaces off 0 by {orth:e}"))?;
    check(mix <= 1e-8, || format!("mixing moved CCA by {mix:e}"))?;
    Ok(format!("identical {same:.1e}, orthogonal {orth:.1e}, mixing {mix:.1e}"))
}

fn intervention_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut mean_err, mut energy, mut orth): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let n = rng.random_range(3..=30);
        let d = rng.random_range(1..=10);
        let x = random_matrix(&mut rng, n, d) * rng.random_range(0.1..10.0);
        let dec = decompose_f64(&x, 0).map_err(|e| e.to_string())?;
        let xc = centered(&x);
        let means = x.row_mean();

        let flat = remove_topk(&x, &dec, dec.rank).map_err(|e| e.to_string())?;
        for row in flat.row_iter() {
            mean_err = mean_err.max((row - &means).amax());
        }

        let k = rng.random_range(1..=dec.rank);
        let cleaned = centered(&remove_topk(&x, &dec, k).map_err(|e| e.to_string())?);
        let removed: f64 = dec.singular_values[..k].iter().map(|s| s * s).sum();
        let total = xc.norm_squared();
        energy = energy.max((cleaned.norm_squared() + removed - total).abs() / total);
        let leak = (&cleaned * dec.right_vectors.columns(0, k)).amax();
        orth = orth.max(leak / xc.amax().max(1.0));
    }
    check(mean_err <= 1e-6, || format!("full removal left {mean_err:e} off the mean row"))?;
    check(energy <= 1e-6, || format!("energy identity off by {energy:e} relative"))?;
    check(orth <= 1e-6, || format!("cleaned rows keep {orth:e} in the removed subspace"))?;
    Ok(format!("mean row {mean_err:.1e}, energy {energy:.1e}, orthogonality {orth:.1e}"))
}

fn series(name: &str, values: &[f64]) -> RankedSeries {
    RankedSeries::new(name, (0..values.len()).collect(), values.to_vec()).unwrap()
}

fn spearman_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let n = rng.random_range(3..=30);
        let x: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        let up: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let down: Vec<f64> = x.iter().map(|v| -v * v * v).collect();
        let rho_up = spearman(&series("x", &x), &series("up", &up)).map_err(|e| e.to_string())?;
        let rho_down = spearman(&series("x", &x), &series("down", &down)).map_err(|e| e.to_string())?;
        check(rho_up == 1.0 && rho_down == -1.0, || format!("monotone {rho_up}, antitone {rho_down}"))?;

        let tied_a: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let tied_b: Vec<f64> = (0..n).map(|_| rng.random_range(0..3) as f64).collect();
        check(average_ranks(&tied_a) == counting_ranks(&tied_a), || format!("ranks differ for {tied_a:?}"))?;
        let distinct = |v: &[f64]| v.iter().any(|a| *a != v[0]);
        if distinct(&tied_a) && distinct(&tied_b) {
            let got = spearman(&series("a", &tied_a), &series("b", &tied_b)).map_err(|e| e.to_string())?;
            let want = spearman_oracle(&tied_a, &tied_b);
            check(got == want, || format!("tied rho {got} vs oracle {want}"))?;
        }
    }

    // constructed antitone pair: substituted loss = 3 - delta
    let values: Vec<f64> = (0..10).map(|_| rng.random_range(0.2..0.99)).collect();
    let curve = DeltaCurve {
        k: 2,
        entries: values.iter().enumerate().map(|(i, &value)| CurveEntry { layer: i + 2, value }).collect(),
        valid_range: (2, 11),
    };
    let table = LossTable {
        dataset_id: "antitone".into(),
        base_loss: 1.0,
        k: 2,
        entries: curve.entries.iter().map(|e| LossEntry { layer: e.layer, loss: 3.0 - e.value }).collect(),
    };
    let sizes: Vec<usize> = (1..=10).collect();
    let report = criticality_report_at(&curve, &table, &sizes).map_err(|e| e.to_string())?;
    check(report.rho == -1.0, || format!("fixture rho = {}", report.rho))?;
    check(report.overlaps.len() == sizes.len(), || "missing overlap sizes".into())?;
    for o in &report.overlaps {
        check(o.overlap == o.m, || format!("overlap@{} = {}", o.m, o.overlap))?;
    }
    Ok(format!("monotone +-1 and tie oracle exact; fixture rho = {}, overlap@m = m for m <= 10", report.rho))
}

fn freeze_plan(mode: PlanMode, layers: Vec<usize>) -> LayerPlan {
    LayerPlan {
        schema_version: 1,
        mode,
        criterion: Criterion::DeltaLowest,
        k: 1,
        m: layers.len(),
        layers,
        source: PlanSource::default(),
        warning: None,
    }
}

fn gradient_check() -> Result<f64, String> {
    let config = ToyConfig {
        num_layers: 3,
        hidden_size: 8,
        num_heads: 2,
        vocab_size: 11,
        seq_len: 6,
        seed: 9,
    };
    let data = synthetic_dataset(&config, Task::Progression, 6, 2, 9);
    let start = init_checkpoint(&config).map_err(|e| e.to_string())?;
    let ckpt = train(&start, &data, &TrainOptions { steps: 5, lr: 0.05, batch_size: 6 }, None).map_err(|e| e.to_string())?;
    let (_, grads) = loss_and_grad(&ckpt, &data).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = grads.named_tensors().iter().map(|t| t.2.len()).collect();
    let total: usize = sizes.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut checked, mut worst) = (0, 0.0f64);
    let h = 1e-4;
    for flat in sample(&mut rng, total, total) {
        if checked == 20 {
            break;
        }
        let (mut tensor, mut entry) = (0, flat);
        while entry >= sizes[tensor] {
            entry -= sizes[tensor];
            tensor += 1;
        }
        let analytic = grads.named_tensors()[tensor].2[entry];
        if analytic.abs() < 1e-6 {
            continue;
        }
        let shifted = |delta: f64| {
            let mut c = ckpt.clone();
            c.params.tensors_mut()[tensor].1[entry] += delta;
            eval_loss(&c, &data).map_err(|e| e.to_string())
        };
        let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
        checked += 1;
    }
    check(checked == 20, || format!("only {checked} parameters had signal"))?;
    check(worst < 1e-3, || format!("gradient relative error {worst:e}"))?;
    Ok(worst)
}

fn freeze_and_identity() -> Result<(), String> {
    let config = ToyConfig {
        num_layers: 4,
        hidden_size: 8,
        num_heads: 2,
        vocab_size: 16,
        seq_len: 8,
        seed: 3,
    };
    let data = synthetic_dataset(&config, Task::Periodic, 8, 3, 3);
    let base = init_checkpoint(&config).map_err(|e| e.to_string())?;
    let opts = TrainOptions { steps: 5, lr: 0.05, batch_size: 4 };
    let run = |plan: Option<&LayerPlan>| train(&base, &data, &opts, plan).map_err(|e| e.to_string());

    let frozen = run(Some(&freeze_plan(PlanMode::FreezeSubset, vec![1, 2])))?;
    for l in [1, 2] {
        check(frozen.params.blocks[l] == base.params.blocks[l], || format!("frozen block {l} moved"))?;
    }
    check(frozen.params.blocks[0] != base.params.blocks[0], || "trainable block 0 did not move".into())?;
    let only = run(Some(&freeze_plan(PlanMode::FinetuneSubset, vec![3])))?;
    for l in 0..3 {
        check(only.params.blocks[l] == base.params.blocks[l], || format!("block {l} outside the subset moved"))?;
    }

    let tuned = run(None)?;
    let table = build_loss_table(&tuned, &tuned, &data, 1, "identity").map_err(|e| e.to_string())?;
    for e in &table.entries {
        check(e.loss - table.base_loss == 0.0, || format!("identity substitution at layer {} changed the loss", e.layer))?;
    }
    Ok(())
}

fn training_fixture() -> Result<(f64, f64), String> {
    let config = ToyConfig::with_seed(42);
    let ckpt = init_checkpoint(&config).map_err(|e| e.to_string())?;
    let data = synthetic_dataset(&config, Task::Periodic, 64, DEFAULT_COMPLETION_LEN, 42);
    let before = eval_loss(&ckpt, &data).map_err(|e| e.to_string())?;
    let trained = train(&ckpt, &data, &TrainOptions::default(), None).map_err(|e| e.to_string())?;
    let after = eval_loss(&trained, &data).map_err(|e| e.to_string())?;
    check(after < before, || format!("loss {before} -> {after}"))?;
    Ok((before, after))
}

/// Every file under `dir` except the run reports, which hold timings.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run_report.json" {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pipeline(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |s: &str| root.join(s).display().to_string();
    let steps: [Vec<String>; 4] = [
        vec!["toygen".into(), "--out".into(), p("toy")],
        vec!["delta".into(), "--bundle".into(), p("toy/bundle"), "--k".into(), "2".into(), "--out".into(), p("delta")],
        vec!["plan".into(), "--curve".into(), p("delta/delta.json"), "--mode".into(), "finetune-subset".into(), "--m".into(), "3".into(), "--out".into(), p("plan")],
        vec![
            "criticality".into(),
            "--curve".into(),
            p("delta/delta.json"),
            "--losses".into(),
            p("toy/losses.json"),
            "--out".into(),
            p("criticality"),
        ],
    ];
    for args in steps {
        let name = args[0].clone();
        critlayer::cli::run(std::iter::once("critlayer".to_string()).chain(args)).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(snapshot(root))
}

fn toy_suite() -> Outcome {
    let start = Instant::now();
    let worst = gradient_check()?;
    freeze_and_identity()?;
    let (before, after) = training_fixture()?;

    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    check(!first.is_empty(), || "pipeline wrote nothing".into())?;
    let names: Vec<&str> = first.iter().map(|f| f.0.as_str()).collect();
    for f in ["criticality/criticality.json", "plan/plan.json", "delta/delta.json", "toy/losses.json"] {
        check(names.contains(&f), || format!("{f} missing"))?;
    }
    if let Some(diff) = first.iter().zip(&second).find(|(x, y)| x != y) {
        return Err(format!("pipeline output {} differs between runs", diff.0 .0));
    }
    check(first.len() == second.len(), || "pipeline runs wrote different file sets".into())?;

    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "grad rel err {worst:.1e}, loss {before:.4} -> {after:.4}, {} files identical, {elapsed:.1?}",
        first.len()
    ))
}

fn format_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..50 {
        let (layers, samples) = (rng.random_range(1..=6), rng.random_range(2..=20));
        let bundle = random_bundle(&mut rng, layers, samples, 12);
        let path = dir.path().join(format!("b{i}"));
        write_bundle(&bundle, &path).map_err(|e| e.to_string())?;
        let back = read_bundle(&path).map_err(|e| e.to_string())?;
        let bits = |b: &ReprBundle| -> Vec<u32> { b.layers.iter().flat_map(|m| m.data().iter().map(|v| v.to_bits())).collect() };
        check(back.manifest == bundle.manifest, || format!("bundle {i}: manifest changed"))?;
        check(bits(&back) == bits(&bundle), || format!("bundle {i}: values changed"))?;
    }

    let source = dir.path().join("b0");
    let layer0 = Path::new("layers").join("layer_000.bin");
    let cases: Vec<Corruption> = vec![
        (
            "magic",
            Box::new(|p: &Path| patch(p, 0, b"XXXX")),
            |e| matches!(e, Error::BadMagic { .. }),
        ),
        (
            "version",
            Box::new(|p: &Path| patch(p, 4, &7u32.to_le_bytes())),
            |e| matches!(e, Error::UnsupportedVersion { version: 7, .. }),
        ),
        (
            "rows",
            Box::new(|p: &Path| patch(p, 8, &999u64.to_le_bytes())),
            |e| matches!(e, Error::HeaderMismatch { header_rows: 999, .. }),
        ),
        (
            "cols",
            Box::new(|p: &Path| patch(p, 16, &999u64.to_le_bytes())),
            |e| matches!(e, Error::HeaderMismatch { header_cols: 999, .. }),
        ),
        (
            "truncated payload",
            Box::new(|p: &Path| resize(p, -1)),
            |e| matches!(e, Error::Truncated { .. }),
        ),
        (
            "truncated header",
            Box::new(|p: &Path| resize(p, -(fs::metadata(p).unwrap().len() as i64) + 10)),
            |e| matches!(e, Error::Truncated { .. }),
        ),
        (
            "trailing bytes",
            Box::new(|p: &Path| resize(p, 3)),
            |e| matches!(e, Error::Truncated { .. }),
        ),
    ];
    let mut names = Vec::new();
    for (i, (name, corrupt, expected)) in cases.iter().enumerate() {
        let target = dir.path().join(format!("corrupt{i}"));
        copy_dir(&source, &target);
        corrupt(&target.join(&layer0));
        match read_bundle(&target) {
            Err(e) if expected(&e) => names.push(*name),
            Err(e) => return Err(format!("{name}: wrong error {e}")),
            Ok(_) => return Err(format!("{name}: corruption accepted")),
        }
    }

    let missing = dir.path().join("missing");
    copy_dir(&source, &missing);
    fs::remove_file(missing.join(&layer0)).unwrap();
    check(
        matches!(read_bundle(&missing), Err(Error::MissingLayerFile { layer: 0, .. })),
        || "missing layer file not reported".into(),
    )?;
    let extra = dir.path().join("extra");
    copy_dir(&source, &extra);
    fs::copy(extra.join(&layer0), extra.join("layers").join("layer_099.bin")).unwrap();
    check(
        matches!(read_bundle(&extra), Err(Error::UnexpectedLayerFile { .. })),
        || "extra layer file not reported".into(),
    )?;
    Ok(format!("50 bundles bit-exact; rejected {} + missing + extra layer", names.join(", ")))
}

fn patch(path: &Path, offset: usize, bytes: &[u8]) {
    let mut data = fs::read(path).unwrap();
    data[offset..offset + bytes.len()].copy_from_slice(bytes);
    fs::write(path, data).unwrap();
}

fn resize(path: &Path, by: i64) {
    let mut data = fs::read(path).unwrap();
    let len = (data.len() as i64 + by) as usize;
    data.resize(len, 0);
    fs::write(path, data).unwrap();
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to.join("layers")).unwrap();
    fs::copy(from.join("manifest.json"), to.join("manifest.json")).unwrap();
    for entry in fs::read_dir(from.join("layers")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join("layers").join(entry.file_name())).unwrap();
    }
}

fn main() {
    let criteria: [Check; 9] = [
        ("CKA oracle equivalence", cka_oracle),
        ("CKA invariance suite", cka_invariance),
        ("delta consistency", delta_consistency),
        ("spectral suite", spectral_suite),
        ("CCA suite", cca_suite),
        ("intervention suite", intervention_suite),
        ("Spearman correctness", spearman_suite),
        ("toy-model suite", toy_suite),
        ("format round-trip", format_round_trip),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
