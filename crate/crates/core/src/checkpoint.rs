//! Binary container for checkpoints and null schedules.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"FINV" | u32 version | u64 header length | JSON header | u64 count | count x f64
//! ```
//!
//! The JSON header carries shapes and metadata; every floating-point value
//! that must round-trip exactly lives in the raw block.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::field::{Activation, ConditionKind, FieldSpec, VelocityField};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"FINV";
pub const FORMAT_VERSION: u32 = 1;

/// Writes a container with the given header and value block.
pub fn write_container<H: Serialize>(path: &Path, header: &H, values: &[f64]) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(24 + header.len() + 8 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("truncated while reading {what}"),
            });
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads a container, returning its decoded header and value block.
pub fn read_container<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader {
        path,
        bytes: &bytes,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(corrupt("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = r.u64("header length")?;
    let header_len = usize::try_from(header_len).map_err(|_| corrupt("header length".into()))?;
    let header_bytes = r.take(header_len, "header")?;
    let header: H =
        serde_json::from_slice(header_bytes).map_err(|e| corrupt(format!("header: {e}")))?;
    let count = r.u64("value count")?;
    let n_bytes = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| corrupt("value count".into()))?;
    let block = r.take(n_bytes, "value block")?;
    if !r.bytes.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", r.bytes.len())));
    }
    let values = block
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// A trained model with the dataset and configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: VelocityField,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    field: FieldSpec,
    activation: Activation,
    registry: Vec<ConditionKind>,
    dataset: DatasetSpec,
    train: TrainConfig,
}

const CHECKPOINT_KIND: &str = "checkpoint";

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        kind: CHECKPOINT_KIND.into(),
        field: ckpt.field.spec.clone(),
        activation: ckpt.field.activation,
        registry: ckpt.field.registry.clone(),
        dataset: ckpt.dataset.clone(),
        train: ckpt.train.clone(),
    };
    write_container(path, &header, &ckpt.field.flatten_parameters())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (header, values): (CheckpointHeader, _) = read_container(path)?;
    if header.kind != CHECKPOINT_KIND {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("expected a checkpoint, found '{}'", header.kind),
        });
    }
    let field =
        VelocityField::from_parameters(header.field, header.registry, &values).map_err(|e| {
            Error::Corrupt {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }
        })?;
    header.dataset.validate()?;
    Ok(Checkpoint {
        field,
        dataset: header.dataset,
        train: header.train,
    })
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_checkpoint(path)
    }
}
