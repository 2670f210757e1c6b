//! Dataset loaders: IDX (MNIST, Fashion-MNIST) and CIFAR-10 binary batches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sampler::Image;
use crate::tensor::Tensor;

pub const DATA_DIR_ENV: &str = "RETINOTOPIC_DATA_DIR";
pub const NUM_CLASSES: usize = 10;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
const CIFAR_PER_BATCH: usize = 10_000;
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: wrong size, expected {expected} bytes, found {actual}")]
    WrongSize {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: label {label} out of range")]
    BadLabel { path: PathBuf, label: u8 },
    #[error("unknown dataset {0:?} (expected mnist, fashion_mnist or cifar10)")]
    UnknownDataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Cifar10 => "cifar10",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetName::Cifar10 => 3,
            _ => 1,
        }
    }

    /// Conventional subdirectory of the data root.
    pub fn subdir(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Cifar10 => "cifar-10-batches-bin",
        }
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetName {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion_mnist" | "fashionmnist" => Ok(DatasetName::FashionMnist),
            "cifar10" | "cifar_10" => Ok(DatasetName::Cifar10),
            _ => Err(DataError::UnknownDataset(s.to_string())),
        }
    }
}

/// Images `(N, C, H, W)` in `[0, 1]` with labels in `0..10`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub split: Split,
    pub name: DatasetName,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn image(&self, i: usize) -> Image<f32> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let n = c * h * w;
        let data = self.images.data()[i * n..(i + 1) * n].to_vec();
        Image::new(Tensor::from_vec(&[c, h, w], data).expect("slice size"))
            .expect("1 or 3 channels")
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// The first `n` examples (all if fewer).
    pub fn truncated(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let n = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * n..(i + 1) * n]);
        }
        Dataset {
            images: Tensor::from_vec(&[indices.len(), c, h, w], data).expect("subset size"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
            name: self.name,
        }
    }

    pub fn label_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn need(path: &Path, bytes: &[u8], expected: usize) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX image file (u8, rank 3) and its label file (u8, rank 1).
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
    name: DatasetName,
) -> Result<Dataset, DataError> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = read(ip)?;
    need(ip, &ib, 16)?;
    let magic = be_u32(&ib, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: ip.to_path_buf(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let (n, h, w) = (
        be_u32(&ib, 4) as usize,
        be_u32(&ib, 8) as usize,
        be_u32(&ib, 12) as usize,
    );
    need(ip, &ib, 16 + n * h * w)?;

    let lb = read(lp)?;
    need(lp, &lb, 8)?;
    let magic = be_u32(&lb, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: lp.to_path_buf(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let nl = be_u32(&lb, 4) as usize;
    need(lp, &lb, 8 + nl)?;
    if nl != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: nl,
        });
    }
    let labels = lb[8..8 + n].to_vec();
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(DataError::BadLabel {
            path: lp.to_path_buf(),
            label,
        });
    }
    let pixels = ib[16..16 + n * h * w]
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 1, h, w], pixels).expect("header size"),
        labels,
        split,
        name,
    })
}

/// Writes IDX image and label files; inverse of [`load_idx`] for pixel
/// values that are multiples of 1/255.
pub fn write_idx(
    ds: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    assert_eq!(ds.channels(), 1, "IDX holds single-channel images");
    let mut ib = Vec::with_capacity(16 + ds.images.len());
    for v in [
        IDX_IMAGES_MAGIC,
        ds.len() as u32,
        ds.height() as u32,
        ds.width() as u32,
    ] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend(
        ds.images
            .data()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lb = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS_MAGIC, ds.len() as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend_from_slice(&ds.labels);
    let write = |p: &Path, b: &[u8]| {
        fs::write(p, b).map_err(|source| DataError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    write(images_path.as_ref(), &ib)?;
    write(labels_path.as_ref(), &lb)
}

fn cifar_files(split: Split) -> Vec<String> {
    match split {
        Split::Train => (1..=5).map(|k| format!("data_batch_{k}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    }
}

/// Reads the binary CIFAR-10 batches of one split from `dir`.
pub fn load_cifar10(dir: impl AsRef<Path>, split: Split) -> Result<Dataset, DataError> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let files = cifar_files(split);
    let mut pixels = Vec::with_capacity(files.len() * CIFAR_PER_BATCH * 3 * plane);
    let mut labels = Vec::with_capacity(files.len() * CIFAR_PER_BATCH);
    for f in files {
        let path = dir.as_ref().join(f);
        let bytes = read(&path)?;
        let expected = CIFAR_PER_BATCH * CIFAR_RECORD;
        if bytes.len() != expected {
            return Err(DataError::WrongSize {
                path,
                expected,
                actual: bytes.len(),
            });
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if rec[0] as usize >= NUM_CLASSES {
                return Err(DataError::BadLabel {
                    path,
                    label: rec[0],
                });
            }
            labels.push(rec[0]);
            pixels.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
        }
    }
    let n = labels.len();
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 3, CIFAR_SIDE, CIFAR_SIDE], pixels).expect("record size"),
        labels,
        split,
        name: DatasetName::Cifar10,
    })
}

/// Root directory for datasets: `explicit`, else the environment variable,
/// else `./data`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn idx_names(split: Split) -> [&'static str; 2] {
    match split {
        Split::Train => ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"],
        Split::Test => ["t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"],
    }
}

/// Finds an IDX file under either common spelling (`-idx3-ubyte` or
/// `.idx3-ubyte`).
fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let dotted = dir.join(stem.replacen("-idx", ".idx", 1));
    if dotted.exists() {
        dotted
    } else {
        dir.join(stem)
    }
}

/// Loads `name` from `root/<subdir>` with the standard file names.
pub fn load_dataset(root: &Path, name: DatasetName, split: Split) -> Result<Dataset, DataError> {
    let dir = root.join(name.subdir());
    match name {
        DatasetName::Cifar10 => load_cifar10(dir, split),
        _ => {
            let [img, lab] = idx_names(split);
            load_idx(find_idx(&dir, img), find_idx(&dir, lab), split, name)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-channel mean and standard deviation; the deviation is floored at
/// 1e-6 so it can divide.
pub fn normalize_stats(ds: &Dataset) -> ChannelStats {
    let (c, hw) = (ds.channels(), ds.height() * ds.width());
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    for (k, plane) in ds.images.data().chunks(hw).enumerate() {
        let ch = k % c;
        for &v in plane {
            let v = f64::from(v);
            sum[ch] += v;
            sq[ch] += v * v;
        }
    }
    let count = (ds.len() * hw) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / count - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    ChannelStats { mean, std }
}
