#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retinotopic::data::{load_dataset, Dataset, DatasetName, Split, DATA_DIR_ENV};
use retinotopic::tensor::Tensor;

/// Data root from the environment, else `<workspace>/data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// `None` (with a note on stderr) when the files are not present.
pub fn try_load(name: DatasetName, split: Split) -> Option<Dataset> {
    let root = data_root();
    match load_dataset(&root, name, split) {
        Ok(ds) => Some(ds),
        Err(e) => {
            eprintln!(
                "skipping: {} not available under {}: {e}",
                name.as_str(),
                root.display()
            );
            None
        }
    }
}

/// Grayscale images of a bright bar whose angle encodes the label, plus
/// noise and a random offset.
pub fn bars(n: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let mid = (size - 1) as f64 / 2.0;
    for i in 0..n {
        let label = (i % 10) as u8;
        let angle = label as f64 * std::f64::consts::PI / 10.0;
        let (s, c) = angle.sin_cos();
        let (ox, oy) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - mid - ox, y as f64 - mid - oy);
                let across = -s * dx + c * dy;
                let along = c * dx + s * dy;
                let v = if across.abs() < 1.5 && along.abs() < size as f64 * 0.35 {
                    0.9
                } else {
                    0.0
                };
                data.push((v + rng.gen_range(0.0..0.1)) as f32);
            }
        }
        labels.push(label);
    }
    Dataset {
        images: Tensor::from_vec(&[n, 1, size, size], data).unwrap(),
        labels,
        split: Split::Train,
        name: DatasetName::Mnist,
    }
}
