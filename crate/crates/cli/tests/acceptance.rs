//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1-3 train on the full datasets and only run with
//! `--include-ignored` (or `--ignored`); otherwise they print SKIP. Their run
//! directories live under `$RETINOTOPIC_ACCEPTANCE_RUNS` (default
//! `target/acceptance`); a finished run found there is reported without
//! retraining.

mod common;

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retinotopic::data::{load_dataset, Dataset, DatasetName, Split};
use retinotopic::geometry::{
    from_log_polar, normalize_angle, rotate_point, scale_point, to_log_polar, CartesianPoint,
    GridSpec,
};
use retinotopic::gradcheck::{run_suite, MODEL_TOLERANCE, OP_TOLERANCE};
use retinotopic::model::{backbone_forward, Checkpoint, ModelConfig, ModelParams};
use retinotopic::nnops::{
    conv2d_forward, spatial_softmax_readout, strided_coord_grid, ConvLayer, PhiReadout,
};
use retinotopic::sampler::{Image, LogPolarSampler};
use retinotopic::tensor::Tensor;
use retinotopic::training::{
    eval_centers, evaluate, train_step, EvalCenter, Objectives, TrainConfig, Trainer,
};
use serde_json::Value;

enum Outcome {
    Pass(String),
    Fail(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

type Criterion = fn() -> Outcome;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let long = args
        .iter()
        .any(|a| a == "--ignored" || a == "--include-ignored");
    let only_long = args.iter().any(|a| a == "--ignored");
    let criteria: [(u32, &str, bool, Criterion); 10] = [
        (1, "mnist accuracy", true, mnist_gate),
        (2, "fashion-mnist accuracy", true, fashion_gate),
        (3, "cifar-10 one-epoch smoke", true, cifar_smoke),
        (4, "geometry round-trip and equivariance", false, geometry),
        (5, "gradient checks", false, gradients),
        (6, "grid-resolution equivariance", false, grid_equivariance),
        (7, "wrap-padded convolution shift", false, conv_shift),
        (8, "spatial softmax readout", false, softmax_readout),
        (9, "training smoke", false, training_smoke),
        (10, "determinism and checkpoint bytes", false, determinism),
    ];
    let mut failed = 0;
    for (n, name, is_long, run) in criteria {
        if (is_long && !long) || (!is_long && only_long) {
            println!("[SKIP] {n:>2} {name}: long run, pass --include-ignored");
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("[PASS] {n:>2} {name}: {d} ({secs:.1}s)"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("[FAIL] {n:>2} {name}: {d} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1-3

fn runs_dir() -> PathBuf {
    std::env::var_os("RETINOTOPIC_ACCEPTANCE_RUNS")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance")
        })
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn read_summary(dir: &Path) -> Option<Value> {
    let text = std::fs::read_to_string(dir.join("summary.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn epochs_in(summary: &Value) -> usize {
    summary["epochs"].as_array().map_or(0, Vec::len)
}

/// Trains `dataset` through the CLI unless a run with `epochs` epochs is
/// already on disk; returns the summary and the captured progress log.
fn train_run(dataset: &str, epochs: usize, extra: &[&str]) -> Result<(Value, String), String> {
    let name: DatasetName = dataset
        .parse()
        .map_err(|e: retinotopic::data::DataError| e.to_string())?;
    let root = common::data_root();
    if let Err(e) = load_dataset(&root, name, Split::Test) {
        return Err(format!("dataset not found under {}: {e}", root.display()));
    }
    let dir = runs_dir().join(dataset);
    if let Some(s) = read_summary(&dir) {
        if epochs_in(&s) >= epochs {
            let log = std::fs::read_to_string(dir.join("train.log")).unwrap_or_default();
            return Ok((s, log));
        }
    }
    let epochs_arg = epochs.to_string();
    let mut args = vec![
        "train",
        "--dataset",
        dataset,
        "--epochs",
        &epochs_arg,
        "--log-every",
        "100",
    ];
    let dir_arg = dir.display().to_string();
    args.extend(["--out-dir", &dir_arg]);
    let root_arg = root.display().to_string();
    args.extend(["--data-dir", &root_arg]);
    args.extend(extra);
    let out = common::bin()
        .args(&args)
        .output()
        .map_err(|e| e.to_string())?;
    let log = String::from_utf8_lossy(&out.stderr).into_owned();
    std::fs::write(dir.join("train.log"), &log).ok();
    if !out.status.success() {
        return Err(format!(
            "training failed: {}",
            log.lines().last().unwrap_or("")
        ));
    }
    read_summary(&dir)
        .map(|s| (s, log))
        .ok_or_else(|| "no summary.json written".into())
}

fn accuracy_gate(dataset: &str, gate: f64, stretch: f64) -> Outcome {
    let (summary, _) = match train_run(dataset, 10, &[]) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let acc = summary["final_test"]["accuracy"].as_f64().unwrap_or(0.0);
    let epochs = epochs_in(&summary);
    let secs: f64 = summary["epochs"].as_array().map_or(0.0, |a| {
        a.iter().filter_map(|e| e["seconds"].as_f64()).sum()
    });
    // The budget is stated for 8 cores; scale the measured time linearly.
    let scaled = secs * cores() as f64 / 8.0;
    let detail = format!(
        "final-saccade test accuracy {acc:.4} (gate {gate:.3}, stretch {stretch:.2}{}) after {epochs} epochs; \
         {secs:.0}s on {} core(s), {scaled:.0}s scaled to 8 cores (budget 7200s)",
        if acc >= stretch { " met" } else { " not met" },
        cores()
    );
    check(acc >= gate && epochs <= 10 && scaled <= 7200.0, detail)
}

fn mnist_gate() -> Outcome {
    accuracy_gate("mnist", 0.97, 0.99)
}

fn fashion_gate() -> Outcome {
    accuracy_gate("fashion_mnist", 0.85, 0.90)
}

/// Mean aggregate loss of the first and last progress lines.
fn first_last_loss(log: &str) -> Option<(f64, f64)> {
    let losses: Vec<f64> = log
        .lines()
        .filter(|l| l.contains(" batch "))
        .filter_map(|l| {
            l.split("aggregate")
                .nth(1)?
                .split_whitespace()
                .next()?
                .parse()
                .ok()
        })
        .collect();
    Some((*losses.first()?, *losses.last()?))
}

fn cifar_smoke() -> Outcome {
    let (summary, log) = match train_run("cifar10", 1, &["--augment", "full"]) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let acc = summary["final_test"]["accuracy"].as_f64().unwrap_or(0.0);
    let Some((first, last)) = first_last_loss(&log) else {
        return Outcome::Fail("no progress lines in the training log".into());
    };
    check(
        acc > 0.15 && last < first,
        format!("loss {first:.4} -> {last:.4}, test accuracy {acc:.4} (gate > 0.15)"),
    )
}

// ---------------------------------------------------------------- 4

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut round, mut rot_rho, mut rot_phi, mut sc_rho, mut sc_phi) =
        (0f64, 0f64, 0f64, 0f64, 0f64);
    for _ in 0..20_000 {
        let pole = CartesianPoint::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
        let r: f64 = rng.gen_range(1e-3..1000.0);
        let t: f64 = rng.gen_range(0.0..TAU);
        let p = CartesianPoint::new(pole.x + r * t.cos(), pole.y + r * t.sin());
        let q = to_log_polar(p, pole).unwrap();
        let back = from_log_polar(q, pole).unwrap();
        round = round.max((back.x - p.x).abs()).max((back.y - p.y).abs());

        let alpha = rng.gen_range(-10.0..10.0);
        let qr = to_log_polar(rotate_point(p, pole, alpha), pole).unwrap();
        rot_rho = rot_rho.max((qr.rho - q.rho).abs());
        rot_phi = rot_phi.max(angle_gap(qr.phi, normalize_angle(q.phi + alpha)));

        let c: f64 = rng.gen_range(0.05..20.0);
        let qs = to_log_polar(scale_point(p, pole, c).unwrap(), pole).unwrap();
        sc_rho = sc_rho.max((qs.rho - q.rho - c.ln()).abs());
        sc_phi = sc_phi.max(angle_gap(qs.phi, q.phi));
    }
    let ok =
        round <= 1e-9 && rot_rho <= 1e-12 && rot_phi <= 1e-9 && sc_rho <= 1e-12 && sc_phi <= 1e-12;
    check(
        ok,
        format!(
            "20000 points: round-trip {round:.1e} (<=1e-9), rotation rho {rot_rho:.1e} (<=1e-12) phi {rot_phi:.1e}, \
             scale rho {sc_rho:.1e} (<=1e-12) phi {sc_phi:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn gradients() -> Outcome {
    let reports = match run_suite(None, 0) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let worst = |pred: &dyn Fn(&str) -> bool| {
        reports
            .iter()
            .filter(|r| pred(r.component))
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    };
    let sampler = worst(&|c| c == "sampler");
    let ops = worst(&|c| !matches!(c, "greedy" | "aggregate"));
    let model = worst(&|c| matches!(c, "greedy" | "aggregate"));
    let failing: Vec<_> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.component)
        .collect();
    check(
        failing.is_empty(),
        format!(
            "sampler over 20 images {sampler:.1e}, worst op {ops:.1e} (< {OP_TOLERANCE:.0e}), tiny model BPTT {model:.1e} \
             (< {MODEL_TOLERANCE:.0e}){}",
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )
}

// ---------------------------------------------------------------- 6

/// A smooth test pattern: a few broad Gaussian blobs.
fn blobs(x: f64, y: f64) -> f64 {
    let g = |cx: f64, cy: f64, s: f64, a: f64| {
        a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()
    };
    g(40.0, 28.0, 6.0, 1.0)
        + g(22.0, 40.0, 8.0, 0.7)
        + g(30.0, 18.0, 5.0, -0.5)
        + g(45.0, 46.0, 7.0, 0.4)
}

/// Mean absolute difference over cells whose sample points fall inside
/// both images, relative to the reference patch's range there.
fn shifted_error(
    sampler: &LogPolarSampler,
    reference: &Image<f64>,
    moved: &Image<f64>,
    center: CartesianPoint,
    map: impl Fn(usize, usize) -> Option<(usize, usize)>,
) -> f64 {
    let spec = *sampler.spec();
    let a = sampler.warp(reference, center);
    let b = sampler.warp(moved, center);
    let grid = sampler.reverse_map(center);
    let limit = (reference.width() - 1) as f64;
    let inside = |i: usize, j: usize| {
        let p = grid.point(i, j);
        (0.0..=limit).contains(&p.x) && (0.0..=limit).contains(&p.y)
    };
    let (mut sum, mut n, mut lo, mut hi) = (0.0, 0usize, f64::MAX, f64::MIN);
    for i in 0..spec.h_prime() {
        for j in 0..spec.w_prime() {
            let Some((si, sj)) = map(i, j) else { continue };
            if !inside(i, j) || !inside(si, sj) {
                continue;
            }
            let (va, vb) = (a.at(&[0, si, sj]), b.at(&[0, i, j]));
            sum += (va - vb).abs();
            n += 1;
            lo = lo.min(va);
            hi = hi.max(va);
        }
    }
    sum / n.max(1) as f64 / (hi - lo).max(1e-12)
}

fn grid_equivariance() -> Outcome {
    let size = 64;
    let center = CartesianPoint::new(31.5, 31.5);
    let spec = GridSpec::new(64, 64, 1.0, 40.0).unwrap();
    let sampler = LogPolarSampler::new(spec);
    let reference = Image::from_fn(1, size, size, |_, y, x| blobs(x as f64, y as f64)).unwrap();
    let mut worst_rot = 0f64;
    for k in [1usize, 5, 16, 37] {
        let alpha = TAU * k as f64 / spec.h_prime() as f64;
        let rotated = Image::from_fn(1, size, size, |_, y, x| {
            let p = rotate_point(CartesianPoint::new(x as f64, y as f64), center, -alpha);
            blobs(p.x, p.y)
        })
        .unwrap();
        let h = spec.h_prime();
        let e = shifted_error(&sampler, &reference, &rotated, center, |i, j| {
            Some(((i + h - k) % h, j))
        });
        worst_rot = worst_rot.max(e);
    }
    let mut worst_scale = 0f64;
    for m in [1usize, 3, 8] {
        let c = (spec.rho_step() * m as f64).exp();
        let scaled = Image::from_fn(1, size, size, |_, y, x| {
            let p = scale_point(CartesianPoint::new(x as f64, y as f64), center, 1.0 / c).unwrap();
            blobs(p.x, p.y)
        })
        .unwrap();
        let e = shifted_error(&sampler, &reference, &scaled, center, |i, j| {
            j.checked_sub(m).map(|s| (i, s))
        });
        worst_scale = worst_scale.max(e);
    }
    check(
        worst_rot <= 0.02 && worst_scale <= 0.02,
        format!("mean |diff| / range: rotation row shifts {worst_rot:.4}, scale column shifts {worst_scale:.4} (<= 0.02)"),
    )
}

// ---------------------------------------------------------------- 7

fn roll_rows(t: &Tensor<f32>, k: usize) -> Tensor<f32> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    Tensor::from_fn(&[c, h, w], |idx| {
        let (ch, rest) = (idx / (h * w), idx % (h * w));
        let (i, j) = (rest / w, rest % w);
        t.at(&[ch, (i + h - k) % h, j])
    })
}

fn conv_shift() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = ConvLayer::<f32>::init(6, 3, 3, &mut rng);
    let x = Tensor::from_fn(&[3, 16, 12], |_| rng.gen_range(-1.0f32..1.0));
    let y = conv2d_forward(&x, &layer).unwrap();
    let mut mismatches = 0;
    for k in 1..16 {
        let ys = conv2d_forward(&roll_rows(&x, k), &layer).unwrap();
        if ys != roll_rows(&y, k) {
            mismatches += 1;
        }
    }
    // The backbone's tap is equivariant to shifts by its stride.
    let params = ModelParams::<f32>::init(&ModelConfig::reference(1), &mut rng);
    let patch = Tensor::from_fn(&[1, 32, 32], |_| rng.gen_range(0.0f32..1.0));
    let tap = backbone_forward(&params, &patch).unwrap().tap;
    let tap_shifted = backbone_forward(&params, &roll_rows(&patch, 8))
        .unwrap()
        .tap;
    let tap_ok = tap_shifted == roll_rows(&tap, 2);
    check(
        mismatches == 0 && tap_ok,
        format!(
            "3x3 conv bitwise equal for {} of 15 row shifts; backbone tap under an 8-row shift: {}",
            15 - mismatches,
            if tap_ok { "bitwise equal" } else { "differs" }
        ),
    )
}

// ---------------------------------------------------------------- 8

fn softmax_readout() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = GridSpec::new(32, 32, 1.0, 40.0).unwrap();
    let grid = strided_coord_grid(&spec, 4);
    let (h, w) = (grid.shape()[0], grid.shape()[1]);
    let (lo, hi) = (spec.r_min().ln(), spec.r_max().ln());
    let mut hull_ok = true;
    for _ in 0..2000 {
        let scale = rng.gen_range(0.1..30.0);
        let fmap = Tensor::from_fn(&[1, h, w], |_| rng.gen_range(-1.0..1.0) * scale);
        let p = spatial_softmax_readout(&fmap, &grid, PhiReadout::Circular).unwrap();
        hull_ok &= p.rho >= lo && p.rho <= hi && (0.0..TAU).contains(&p.phi);
    }
    let uniform =
        spatial_softmax_readout(&Tensor::<f64>::zeros(&[1, h, w]), &grid, PhiReadout::Linear)
            .unwrap();
    let n = (h * w) as f64;
    let mean_rho = (0..h * w).map(|k| grid.data()[2 * k + 1]).sum::<f64>() / n;
    let mean_phi = (0..h * w).map(|k| grid.data()[2 * k]).sum::<f64>() / n;
    let uniform_err = (uniform.rho - mean_rho)
        .abs()
        .max((uniform.phi - mean_phi).abs());
    let mut spike_err = 0f64;
    for _ in 0..50 {
        let (i, j) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let mut fmap = Tensor::<f64>::zeros(&[1, h, w]);
        *fmap.at_mut(&[0, i, j]) = 60.0;
        for mode in [PhiReadout::Circular, PhiReadout::Linear] {
            let p = spatial_softmax_readout(&fmap, &grid, mode).unwrap();
            let err =
                angle_gap(p.phi, grid.at(&[i, j, 0])).max((p.rho - grid.at(&[i, j, 1])).abs());
            spike_err = spike_err.max(err);
        }
    }
    check(
        hull_ok && uniform_err <= 1e-6 && spike_err <= 1e-6,
        format!(
            "hull bound held for 2000 maps: {hull_ok}; uniform centroid error {uniform_err:.1e}, spike error {spike_err:.1e} \
             (<= 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------- 9

fn smoke_data() -> (Dataset, &'static str) {
    match load_dataset(&common::data_root(), DatasetName::Mnist, Split::Train) {
        Ok(ds) => (ds, "MNIST"),
        Err(_) => (
            common::bars(6400, 28, 9, Split::Train),
            "synthetic bars (MNIST not found)",
        ),
    }
}

fn training_smoke() -> Outcome {
    let (ds, source) = smoke_data();
    let cfg = TrainConfig {
        deterministic: true,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone(), 1, 28, 28).unwrap();

    let first = trainer.epoch_samples(&ds.truncated(6400.min(ds.len())), 0);
    let obj = Objectives::for_epoch(&cfg, 0);
    let (stats, _) = train_step(&trainer.params, &first[..32], trainer.retina(), obj, 1).unwrap();
    let chance = 10f64.ln();
    let start_ok =
        (stats.loss_greedy - chance).abs() <= 0.3 && (stats.loss_aggregate - chance).abs() <= 0.3;

    let subset = ds.truncated(6400.min(ds.len()));
    let mut losses = Vec::new();
    trainer
        .train_epoch(&subset, &mut |_, s| losses.push(s.loss_total))
        .unwrap();
    // mean of batches 1-50 against the median of batches 151-200
    let head = &losses[..50.min(losses.len())];
    let start = head.iter().sum::<f64>() / head.len() as f64;
    let mut tail = losses[losses.len().saturating_sub(50)..].to_vec();
    tail.sort_by(f64::total_cmp);
    let end = tail[tail.len() / 2];

    let eight = ds.truncated(8);
    let over_cfg = TrainConfig {
        batch_size: 8,
        init_margin: 0.49,
        deterministic: true,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut over = Trainer::new(over_cfg.clone(), 1, 28, 28).unwrap();
    let centers = eval_centers(&eight, EvalCenter::ImageCenter, 0.0, 0);
    let mut acc = 0.0;
    while over.epochs_done < 300 && acc < 1.0 {
        over.train_epoch(&eight, &mut |_, _| {}).unwrap();
        if over.epochs_done.is_multiple_of(10) {
            acc = evaluate(
                &over.params,
                &eight,
                over.retina(),
                &centers,
                over_cfg.saccades,
                1,
            )
            .unwrap()
            .accuracy;
        }
    }
    check(
        start_ok && end < start && end < stats.loss_total && acc == 1.0,
        format!(
            "{source}: first batch greedy {:.3} aggregate {:.3} (ln 10 = {chance:.3} +- 0.3); joint loss over {} batches \
             {start:.3} (mean of first 50) -> {end:.3} (median of last 50); 8-sample overfit accuracy {acc:.3} after {} steps",
            stats.loss_greedy,
            stats.loss_aggregate,
            losses.len(),
            over.epochs_done
        ),
    )
}

// ---------------------------------------------------------------- 10

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    common::write_bars_mnist(&root, 96, 40);
    let root_arg = root.display().to_string();
    let run = |name: &str, epochs: &str, resume: Option<&Path>| {
        let out = tmp.path().join(name).display().to_string();
        let mut args = vec![
            "train",
            "--data-dir",
            &root_arg,
            "--out-dir",
            &out,
            "--epochs",
            epochs,
            "--deterministic",
            "--seed",
            "5",
        ];
        let resume_arg = resume.map(|p| p.display().to_string());
        if let Some(r) = &resume_arg {
            args.extend(["--resume", r.as_str()]);
        }
        common::run_ok(&args);
        tmp.path().join(name)
    };
    let a = run("a", "2", None);
    let b = run("b", "2", None);
    let csv_a = std::fs::read(a.join("metrics.csv")).unwrap();
    let csv_b = std::fs::read(b.join("metrics.csv")).unwrap();
    let ck_same = std::fs::read(a.join("epoch_2.rtnt")).unwrap()
        == std::fs::read(b.join("epoch_2.rtnt")).unwrap();

    let c = run("c", "1", None);
    let c = run("c", "2", Some(&c.join("epoch_1.rtnt")));
    let csv_c = std::fs::read(c.join("metrics.csv")).unwrap();

    let original = std::fs::read(a.join("epoch_2.rtnt")).unwrap();
    let copy = tmp.path().join("copy.rtnt");
    Checkpoint::load(a.join("epoch_2.rtnt"))
        .unwrap()
        .save(&copy)
        .unwrap();
    let round_trip = std::fs::read(&copy).unwrap() == original;
    check(
        csv_a == csv_b && ck_same && csv_c == csv_a && round_trip,
        format!(
            "metrics CSV identical across runs: {}; final checkpoints identical: {ck_same}; resumed run matches: {}; \
             save/load/save byte-identical: {round_trip}",
            csv_a == csv_b,
            csv_c == csv_a
        ),
    )
}
