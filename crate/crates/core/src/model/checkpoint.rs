//! Binary checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "RTNT" | version: u32 | count: u32 | count x record
//! record = name_len: u32 | name: UTF-8 | rank: u32 | dims: rank x u32 | data: f32 x prod(dims)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ModelParams;
use crate::tensor::{ContractViolation, Tensor};

pub const MAGIC: &[u8; 4] = b"RTNT";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any single length field; guards against allocating from a
/// corrupt header.
const MAX_FIELD: u64 = 1 << 31;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("duplicate record {0:?}")]
    DuplicateRecord(String),
    #[error(transparent)]
    Params(#[from] ContractViolation),
}

/// Ordered named tensors. Model parameters use the names in
/// [`super::PARAM_NAMES`]; other records (optimizer moments, metadata) ride
/// alongside under their own prefixes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    records: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: &ModelParams<f32>) -> Self {
        let mut ck = Self::new();
        for (name, t) in params.named_tensors() {
            ck.records.push((name.to_string(), t.clone()));
        }
        ck
    }

    /// Appends a record; names must be unique.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<f32>,
    ) -> Result<(), CheckpointError> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(CheckpointError::DuplicateRecord(name));
        }
        self.records.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn records(&self) -> &[(String, Tensor<f32>)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Model parameters only; records under other names are ignored.
    pub fn params(&self) -> Result<ModelParams<f32>, CheckpointError> {
        let named = super::PARAM_NAMES
            .iter()
            .filter_map(|&n| self.get(n).map(|t| (n.to_string(), t.clone())))
            .collect();
        Ok(ModelParams::from_named(named)?)
    }

    /// Records whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor<f32>)> + 'a {
        self.records
            .iter()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_u32(w, self.records.len())?;
        for (name, t) in &self.records {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.rank())?;
            for &d in t.shape() {
                write_u32(w, d)?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let count = read_len(r, "record count")?;
        let mut ck = Self::new();
        for _ in 0..count {
            let name_len = read_len(r, "name length")?;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Corrupt("record name is not UTF-8".into()))?;
            let rank = read_len(r, "rank")?;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(read_len(r, "dimension")?);
            }
            let n = shape
                .iter()
                .try_fold(1u64, |acc, &d| {
                    acc.checked_mul(d as u64).filter(|&v| v <= MAX_FIELD)
                })
                .ok_or_else(|| {
                    CheckpointError::Corrupt(format!(
                        "record {name:?} has oversized shape {shape:?}"
                    ))
                })?;
            let mut bytes = vec![0u8; n as usize * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ck.push(name, Tensor::from_vec(&shape, data)?)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(CheckpointError::Corrupt(
                "trailing bytes after last record".into(),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Writes the parameters alone.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams<f32>,
) -> Result<(), CheckpointError> {
    Checkpoint::from_params(params).save(path)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>, CheckpointError> {
    Checkpoint::load(path)?.params()
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v)
        .map_err(|_| CheckpointError::Corrupt(format!("field {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R, what: &str) -> Result<usize, CheckpointError> {
    let v = read_u32(r)?;
    if u64::from(v) > MAX_FIELD {
        return Err(CheckpointError::Corrupt(format!(
            "{what} {v} is implausibly large"
        )));
    }
    Ok(v as usize)
}
