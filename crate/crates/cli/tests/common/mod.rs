#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retinotopic::data::{write_idx, Dataset, DatasetName, Split, DATA_DIR_ENV};
use retinotopic::tensor::Tensor;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_retinotopic"))
}

/// Runs the binary, panicking with its output on failure.
pub fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "retinotopic {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Data root from the environment, else `<workspace>/data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// Grayscale images of a bright bar whose angle encodes the label, plus
/// noise and a random offset.
pub fn bars(n: usize, size: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let mid = (size - 1) as f64 / 2.0;
    for i in 0..n {
        let label = (i % 10) as u8;
        let (s, c) = (label as f64 * std::f64::consts::PI / 10.0).sin_cos();
        let (ox, oy) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - mid - ox, y as f64 - mid - oy);
                let on =
                    (-s * dx + c * dy).abs() < 1.5 && (c * dx + s * dy).abs() < size as f64 * 0.35;
                data.push((if on { 0.9 } else { 0.0 } + rng.gen_range(0.0..0.1)) as f32);
            }
        }
        labels.push(label);
    }
    Dataset {
        images: Tensor::from_vec(&[n, 1, size, size], data).unwrap(),
        labels,
        split,
        name: DatasetName::Mnist,
    }
}

/// Writes a small 28x28 bar dataset in MNIST's IDX layout under
/// `root/mnist`.
pub fn write_bars_mnist(root: &Path, train: usize, test: usize) {
    let dir = root.join("mnist");
    std::fs::create_dir_all(&dir).unwrap();
    let tr = bars(train, 28, 1, Split::Train);
    let te = bars(test, 28, 2, Split::Test);
    write_idx(
        &tr,
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    write_idx(
        &te,
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap();
}
