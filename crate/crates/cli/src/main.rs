mod commands;
mod config;
mod render;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "retinotopic",
    version,
    about = "Log-polar glimpse networks: train, evaluate, inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset, writing checkpoints, metrics and a run summary.
    Train {
        #[command(flatten)]
        cfg: ConfigFlags,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference check of every backward pass in f64.
    Gradcheck {
        /// Run only components whose name contains this string.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Export the fixations, patches and path overlay for one image.
    Trace {
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the split.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "test")]
        split: String,
        /// Nearest-neighbour magnification of the overlay image.
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Log-polar warp of a PPM/PGM image about a center.
    Warp {
        input: PathBuf,
        #[arg(long)]
        cx: f64,
        #[arg(long)]
        cy: f64,
        #[arg(long, default_value_t = 64)]
        patch: usize,
        /// Patch width (radial samples); defaults to the patch size.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        r_min: f64,
        /// Defaults to the image diagonal.
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Flags mirroring the config-file keys; set flags override the file.
#[derive(Args, Default)]
struct ConfigFlags {
    /// key=value file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist, fashion_mnist or cifar10.
    #[arg(long)]
    dataset: Option<String>,
    /// Data root; falls back to RETINOTOPIC_DATA_DIR, then ./data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Factor applied to the rate every `lr_decay_every` epochs.
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_decay_every: Option<usize>,
    /// adam or sgd_momentum.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    lambda_greedy: Option<f64>,
    #[arg(long)]
    greedy_only_epochs: Option<usize>,
    #[arg(long)]
    saccades: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// none, full, or a list such as flip,zoom.
    #[arg(long)]
    augment: Option<String>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    r_min: Option<f64>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    init_margin: Option<f64>,
    /// circular or linear.
    #[arg(long)]
    phi_readout: Option<String>,
    /// center or random.
    #[arg(long)]
    eval_center: Option<String>,
    /// Single worker, ordered reduction: bit-identical reruns.
    #[arg(long)]
    deterministic: bool,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.to_string()));
                })*
            };
        }
        push!(
            dataset,
            train_limit,
            test_limit,
            threads,
            log_every,
            batch_size,
            epochs,
            lr,
            lr_decay,
            lr_decay_every,
            optimizer,
            momentum,
            weight_decay,
            clip_norm,
            lambda_greedy,
            greedy_only_epochs,
            saccades,
            seed,
            augment,
            patch,
            r_min,
            r_max,
            init_margin,
            phi_readout,
            eval_center
        );
        if let Some(p) = &self.data_dir {
            out.push(("data_dir", p.display().to_string()));
        }
        if let Some(p) = &self.out_dir {
            out.push(("out_dir", p.display().to_string()));
        }
        if self.deterministic {
            out.push(("deterministic", "true".to_string()));
        }
        out
    }

    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.pairs())
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { cfg, resume } => commands::train(cfg.resolve()?, resume.as_deref()),
        Command::Eval {
            cfg,
            checkpoint,
            split,
        } => commands::eval(cfg.resolve()?, &checkpoint, &split),
        Command::Gradcheck { only, seed, json } => {
            let ok = commands::gradcheck(only.as_deref(), seed, json.as_deref())?;
            if !ok {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Trace {
            cfg,
            checkpoint,
            index,
            split,
            scale,
        } => commands::trace(cfg.resolve()?, &checkpoint, index, &split, scale),
        Command::Warp {
            input,
            cx,
            cy,
            patch,
            width,
            r_min,
            r_max,
            output,
        } => commands::warp(
            &input,
            cx,
            cy,
            patch,
            width.unwrap_or(patch),
            r_min,
            r_max,
            &output,
        ),
    }
}
