//! Binary tensor container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CLAB"            4 bytes magic
//! version           u32 (currently 1)
//! count             u32
//! per tensor:
//!   name_len        u32, followed by name_len bytes of UTF-8
//!   rank            u32
//!   dims            rank x u64
//!   payload         product(dims) x f64
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLAB";
pub const VERSION: u32 = 1;

/// Ordered name -> tensor map stored in one checkpoint file.
pub type TensorMap = IndexMap<String, Tensor>;

pub fn encode(tensors: &TensorMap) -> Vec<u8> {
    let payload: usize = tensors.values().map(|t| 8 * t.numel() + 8 * t.rank()).sum();
    let mut out = Vec::with_capacity(12 + payload + 16 * tensors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("missing CLAB magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut tensors = TensorMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format("payload overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn save(path: &Path, tensors: &TensorMap) -> Result<()> {
    fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TensorMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Adds every parameter of `params` under `prefix.` and, when
/// `with_momentum` is set, its optimizer buffers under `prefix@momentum.`.
pub fn insert_params(map: &mut TensorMap, prefix: &str, params: &ParamSet, with_momentum: bool) {
    for (name, t) in params.iter() {
        let mut t = t.clone();
        t.clear_grad();
        map.insert(format!("{prefix}.{name}"), t);
    }
    if with_momentum {
        for (name, t) in params.momentum_buffers() {
            map.insert(format!("{prefix}@momentum.{name}"), t.clone());
        }
        map.insert(
            format!("{prefix}@step"),
            Tensor::scalar(params.step() as f64),
        );
    }
}

/// Inverse of [`insert_params`]; parameter order follows the file order.
pub fn extract_params(map: &TensorMap, prefix: &str) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    let head = format!("{prefix}.");
    for (name, t) in map {
        if let Some(short) = name.strip_prefix(&head) {
            params.insert(short, t.clone())?;
        }
    }
    if params.is_empty() {
        return Err(Error::Format(format!("no parameters under `{prefix}`")));
    }
    let mom = format!("{prefix}@momentum.");
    for (name, t) in map {
        if let Some(short) = name.strip_prefix(&mom) {
            params.set_momentum(short, t.clone())?;
        }
    }
    if let Some(step) = map.get(&format!("{prefix}@step")) {
        params.set_step(step.data()[0] as u64);
    }
    Ok(params)
}
