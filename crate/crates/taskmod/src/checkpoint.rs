//! Named-tensor container used for checkpoints and dataset files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! u32 version
//! u32 record count
//! per record:
//!     u32 name length, UTF-8 name bytes
//!     u32 rank, rank x u64 extents
//!     product(extents) x f64 values
//! ```

use std::fs;
use std::path::Path;

use taskmod_core::{TaskModel, Tensor};

use crate::error::{AppError, AppResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor,
}

impl Record {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

pub fn encode<'a, I>(records: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let records: Vec<_> = records.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>, String> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| format!("record name is not UTF-8: {e}"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| format!("{name}: extent too large"))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| format!("{name}: shape {shape:?} does not fit the file"))?;
        let raw = r.take(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(shape, values).map_err(|e| format!("{name}: {e}"))?;
        records.push(Record { name, tensor });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(records)
}

pub fn write_records<'a, I>(path: &Path, records: I) -> AppResult<()>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    fs::write(path, encode(records)).map_err(|e| AppError::io(path, e))
}

pub fn read_records(path: &Path) -> AppResult<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|reason| AppError::format(path, reason))
}

/// Every parameter of `model` in registry order.
pub fn model_bytes(model: &TaskModel) -> Vec<u8> {
    let named = model.named_params();
    encode(named.iter().map(|(n, t)| (n.as_str(), *t)))
}

/// Only the shared (or only the task-specific) parameters of `model`.
pub fn group_bytes(model: &TaskModel, shared: bool) -> Vec<u8> {
    let named = model.named_params_in(shared);
    encode(named.iter().map(|(n, t)| (n.as_str(), *t)))
}

pub fn save_model(path: &Path, model: &TaskModel) -> AppResult<()> {
    fs::write(path, model_bytes(model)).map_err(|e| AppError::io(path, e))
}

/// Loads every parameter of `model` from `path`; names and shapes must match
/// exactly.
pub fn load_model(path: &Path, model: &mut TaskModel) -> AppResult<()> {
    let records = read_records(path)?;
    model.load_named(records.iter().map(|r| (r.name.as_str(), &r.tensor)), true)?;
    Ok(())
}

/// Copies the shared parameters of `model` from the checkpoint at `path`,
/// ignoring any task-specific records it holds.
pub fn load_shared(path: &Path, model: &mut TaskModel) -> AppResult<usize> {
    let records = read_records(path)?;
    let wanted: Vec<String> = model.named_params_in(true).into_iter().map(|(n, _)| n).collect();
    let picked = records.iter().filter(|r| wanted.contains(&r.name));
    let loaded = model.load_named(picked.map(|r| (r.name.as_str(), &r.tensor)), false)?;
    if loaded != wanted.len() {
        return Err(AppError::format(
            path,
            format!("checkpoint holds {loaded} of {} shared parameters", wanted.len()),
        ));
    }
    Ok(loaded)
}
