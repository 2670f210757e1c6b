use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use retinotopic::data::{data_root, load_dataset, normalize_stats, Dataset, Split};
use retinotopic::geometry::{CartesianPoint, GridSpec};
use retinotopic::gradcheck;
use retinotopic::model::{forward_aggregate, Checkpoint, ModelParams};
use retinotopic::ppm;
use retinotopic::sampler::LogPolarSampler;
use retinotopic::training::{
    eval_centers, evaluate, metrics_header, EpochSummary, EvalMetrics, MetricsRow, StepStats,
    Trainer,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::render;

pub const BUILD_ID: &str = env!("RETINOTOPIC_BUILD_ID");

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => bail!("split must be train or test, got {s:?}"),
    }
}

fn init_threads(cfg: &RunConfig) -> Result<()> {
    let n = if cfg.train.deterministic {
        Some(1)
    } else {
        cfg.threads
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn workers(cfg: &RunConfig) -> usize {
    if cfg.train.deterministic {
        1
    } else {
        rayon::current_num_threads()
    }
}

fn load(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let root = data_root(cfg.data_dir.as_deref());
    let ds = load_dataset(&root, cfg.dataset, split).with_context(|| {
        format!(
            "loading {} {split} split from {}",
            cfg.dataset,
            root.display()
        )
    })?;
    let limit = match split {
        Split::Train => cfg.train_limit,
        Split::Test => cfg.test_limit,
    };
    Ok(match limit {
        Some(n) => ds.truncated(n),
        None => ds,
    })
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    build: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    data_root: PathBuf,
    resumed_from: Option<&'a Path>,
    channel_stats: retinotopic::data::ChannelStats,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    build: &'a str,
    dataset: String,
    epochs: &'a [EpochSummary],
    final_test: Option<&'a EvalMetrics>,
    seconds: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn append_rows(path: &Path, rows: &[MetricsRow], saccades: usize) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    for r in rows {
        writeln!(f, "{}", r.to_csv(saccades))?;
    }
    Ok(())
}

fn print_eval(m: &EvalMetrics) {
    println!("samples          {}", m.samples);
    println!("final accuracy   {:.4}", m.accuracy);
    println!("greedy accuracy  {:.4}", m.greedy_accuracy);
    println!("aggregate loss   {:.4}", m.loss_aggregate);
    println!("saccade  accuracy");
    for (k, a) in m.per_saccade.iter().enumerate() {
        println!("{:>7}  {a:.4}", k + 1);
    }
    println!("confusion (rows: label, columns: prediction)");
    for (label, row) in m.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        println!("{label:>3} {}", cells.join(""));
    }
}

pub fn train(cfg: RunConfig, resume: Option<&Path>) -> Result<()> {
    init_threads(&cfg)?;
    let train_ds = load(&cfg, Split::Train)?;
    let test_ds = load(&cfg, Split::Test)?;
    let (c, h, w) = (train_ds.channels(), train_ds.height(), train_ds.width());
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            Trainer::from_checkpoint(cfg.train.clone(), &ck, h, w)?
        }
        None => Trainer::new(cfg.train.clone(), c, h, w)?,
    };
    write_json(
        &cfg.out_dir.join("run.json"),
        &RunRecord {
            command: "train",
            build: BUILD_ID,
            version: env!("CARGO_PKG_VERSION"),
            config: &cfg,
            data_root: data_root(cfg.data_dir.as_deref()),
            resumed_from: resume,
            channel_stats: normalize_stats(&train_ds),
        },
    )?;

    let saccades = cfg.train.saccades;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    if resume.is_none() || !metrics_path.exists() {
        fs::write(&metrics_path, metrics_header(saccades) + "\n")?;
    }
    let centers = eval_centers(
        &test_ds,
        cfg.train.eval_center,
        cfg.train.init_margin,
        cfg.train.seed,
    );
    let run_start = Instant::now();
    let mut epochs = Vec::new();
    eprintln!(
        "training on {} {} images ({} test), {} parameters, {} workers",
        train_ds.len(),
        cfg.dataset,
        test_ds.len(),
        trainer.params.num_parameters(),
        workers(&cfg)
    );
    while trainer.epochs_done < cfg.train.epochs {
        let epoch = trainer.epochs_done + 1;
        let start = Instant::now();
        let (mut run_g, mut run_a, mut count) = (0.0, 0.0, 0usize);
        let batches = train_ds.len().div_ceil(cfg.train.batch_size);
        let log_every = cfg.log_every.max(1);
        let mut hook = |b: usize, s: &StepStats| {
            run_g += s.loss_greedy;
            run_a += s.loss_aggregate;
            count += 1;
            if (b + 1).is_multiple_of(log_every) || b + 1 == batches {
                eprintln!(
                    "epoch {epoch} batch {}/{batches}  greedy {:.4}  aggregate {:.4}  {:.0}s",
                    b + 1,
                    run_g / count as f64,
                    run_a / count as f64,
                    start.elapsed().as_secs_f64()
                );
                (run_g, run_a, count) = (0.0, 0.0, 0);
            }
        };
        let stats = trainer.train_epoch(&train_ds, &mut hook)?;
        let test = evaluate(
            &trainer.params,
            &test_ds,
            trainer.retina(),
            &centers,
            saccades,
            workers(&cfg),
        )?;

        let mut rows = vec![
            MetricsRow::train(epoch, "greedy", stats.loss_greedy),
            MetricsRow::train(epoch, "aggregate", stats.loss_aggregate),
        ];
        rows.extend(MetricsRow::from_eval(epoch, "test", &test));
        append_rows(&metrics_path, &rows, saccades)?;
        trainer
            .checkpoint()?
            .save(cfg.out_dir.join(format!("epoch_{epoch}.rtnt")))?;
        println!(
            "epoch {epoch}: train greedy {:.4} aggregate {:.4} | test accuracy {:.4} (per saccade {}) | {:.0}s",
            stats.loss_greedy,
            stats.loss_aggregate,
            test.accuracy,
            test.per_saccade.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(" "),
            start.elapsed().as_secs_f64()
        );
        epochs.push(EpochSummary {
            epoch,
            train_loss_greedy: stats.loss_greedy,
            train_loss_aggregate: stats.loss_aggregate,
            test: Some(test),
            seconds: start.elapsed().as_secs_f64(),
        });
        write_json(
            &cfg.out_dir.join("summary.json"),
            &RunSummary {
                build: BUILD_ID,
                dataset: cfg.dataset.to_string(),
                epochs: &epochs,
                final_test: epochs.last().and_then(|e| e.test.as_ref()),
                seconds: run_start.elapsed().as_secs_f64(),
            },
        )?;
    }
    Ok(())
}

fn load_params(path: &Path) -> Result<ModelParams<f32>> {
    let ck =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.params()?)
}

fn check_channels(params: &ModelParams<f32>, ds: &Dataset) -> Result<()> {
    let expected = params.conv1.in_channels();
    if ds.channels() != expected {
        bail!(
            "checkpoint expects {expected}-channel images, {} has {}",
            ds.name,
            ds.channels()
        );
    }
    Ok(())
}

pub fn eval(cfg: RunConfig, checkpoint: &Path, split: &str) -> Result<()> {
    init_threads(&cfg)?;
    let params = load_params(checkpoint)?;
    let ds = load(&cfg, parse_split(split)?)?;
    check_channels(&params, &ds)?;
    let retina = cfg
        .train
        .retina(ds.height(), ds.width())
        .map_err(anyhow::Error::msg)?;
    let centers = eval_centers(
        &ds,
        cfg.train.eval_center,
        cfg.train.init_margin,
        cfg.train.seed,
    );
    let m = evaluate(
        &params,
        &ds,
        &retina,
        &centers,
        cfg.train.saccades,
        workers(&cfg),
    )?;
    print_eval(&m);
    fs::create_dir_all(&cfg.out_dir)?;
    #[derive(Serialize)]
    struct EvalRecord<'a> {
        build: &'a str,
        checkpoint: &'a Path,
        dataset: String,
        split: &'a str,
        metrics: &'a EvalMetrics,
    }
    let path = cfg.out_dir.join("eval.json");
    write_json(
        &path,
        &EvalRecord {
            build: BUILD_ID,
            checkpoint,
            dataset: cfg.dataset.to_string(),
            split,
            metrics: &m,
        },
    )?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn gradcheck(only: Option<&str>, seed: u64, json: Option<&Path>) -> Result<bool> {
    let reports = gradcheck::run_suite(only, seed)?;
    if reports.is_empty() {
        bail!(
            "no component matches {:?}; known: {}",
            only.unwrap_or(""),
            gradcheck::COMPONENTS.join(", ")
        );
    }
    println!(
        "central differences, step {:e}, 64-bit; thresholds {:e} per op, {:e} end to end",
        gradcheck::STEP,
        gradcheck::OP_TOLERANCE,
        gradcheck::MODEL_TOLERANCE
    );
    println!(
        "{:<16} {:>12} {:>10} {:>8}  result",
        "component", "max rel err", "threshold", "checked"
    );
    for r in &reports {
        println!(
            "{:<16} {:>12.3e} {:>10.0e} {:>8}  {}",
            r.component,
            r.max_rel_error,
            r.threshold,
            r.checked,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    if let Some(path) = json {
        write_json(path, &reports)?;
    }
    Ok(reports.iter().all(|r| r.passed()))
}

pub fn trace(
    cfg: RunConfig,
    checkpoint: &Path,
    index: usize,
    split: &str,
    scale: usize,
) -> Result<()> {
    let params = load_params(checkpoint)?;
    let ds = load(&cfg, parse_split(split)?)?;
    check_channels(&params, &ds)?;
    if index >= ds.len() {
        bail!("index {index} out of range for {} images", ds.len());
    }
    let retina = cfg
        .train
        .retina(ds.height(), ds.width())
        .map_err(anyhow::Error::msg)?;
    let img = ds.image(index);
    let centers = eval_centers(
        &ds.subset(&[index]),
        cfg.train.eval_center,
        cfg.train.init_margin,
        cfg.train.seed ^ index as u64,
    );
    let (probs, trace) = forward_aggregate(&params, &img, centers[0], &retina, cfg.train.saccades)?;

    let dir = cfg.out_dir.join(format!("trace_{index}"));
    fs::create_dir_all(&dir)?;
    let mut csv = String::from("step,x,y\n");
    for (k, c) in trace.centers.iter().enumerate() {
        csv.push_str(&format!("{k},{:.6},{:.6}\n", c.x, c.y));
    }
    fs::write(dir.join("centers.csv"), csv)?;
    for (k, patch) in trace.patches.iter().enumerate() {
        let patch = retinotopic::sampler::Image::new(patch.clone())?;
        ppm::write(dir.join(format!("patch_{k}.ppm")), &render::to_rgb(&patch))?;
    }
    let scale = scale.max(1);
    let base = render::upscale(&render::to_rgb(&img), scale);
    let path: Vec<CartesianPoint> = trace
        .centers
        .iter()
        .map(|&c| render::scale_point(c, scale))
        .collect();
    let overlay = render::draw_path(&base, &path, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    ppm::write(dir.join("overlay.ppm"), &overlay)?;

    #[derive(Serialize)]
    struct TraceRecord<'a> {
        index: usize,
        label: usize,
        prediction: usize,
        centers: &'a [CartesianPoint],
        class_probs: &'a [Vec<f64>],
    }
    write_json(
        &dir.join("trace.json"),
        &TraceRecord {
            index,
            label: ds.label(index),
            prediction: probs.argmax(),
            centers: &trace.centers,
            class_probs: &trace.class_probs,
        },
    )?;
    println!("label {} prediction {}", ds.label(index), probs.argmax());
    for (k, c) in trace.centers.iter().enumerate() {
        println!("fixation {k}: ({:.2}, {:.2})", c.x, c.y);
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn warp(
    input: &Path,
    cx: f64,
    cy: f64,
    rows: usize,
    cols: usize,
    r_min: f64,
    r_max: Option<f64>,
    output: &Path,
) -> Result<()> {
    let img = ppm::read(input).with_context(|| format!("reading {}", input.display()))?;
    let (h, w) = (img.height(), img.width());
    let r_max = r_max.unwrap_or_else(|| ((h * h + w * w) as f64).sqrt());
    let spec = GridSpec::new(rows, cols, r_min, r_max)?;
    let patch = LogPolarSampler::new(spec).warp(&img, CartesianPoint::new(cx, cy));
    ppm::write(output, &retinotopic::sampler::Image::new(patch)?)?;
    eprintln!(
        "wrote {}x{} log-polar patch to {}",
        rows,
        cols,
        output.display()
    );
    Ok(())
}
