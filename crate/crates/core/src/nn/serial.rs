//! Checkpoint container: a JSON header followed by named f64 arrays.
//!
//! Layout (all integers little-endian):
//!   magic "DFSHCKP1"
//!   u32 header length, then that many bytes of JSON
//!   u32 array count
//!   per array: u32 name length + name bytes, u8 ndim, u32 dims...,
//!              u64 element count, f64 data
//!
//! The header carries the model kind, its architecture spec, the hash of the
//! config that produced it, and the seed, so loads can verify they are being
//! combined with consistent artifacts.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::tape::Arr;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DFSHCKP1";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub arch: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

pub fn write_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    arrays: &[(String, &Arr)],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let header_json = serde_json::to_vec(header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, arr) in arrays {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(arr.ndim() as u8);
        for d in arr.shape() {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(arr.len() as u64).to_le_bytes());
        for v in arr.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, BTreeMap<String, Arr>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint {}",
                path.display()
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let hlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(&mut pos, hlen)?)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let nlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("bad array name: {e}")))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        if dims.iter().product::<usize>() != len {
            return Err(Error::Checkpoint(format!(
                "array '{name}' length {len} does not match dims {dims:?}"
            )));
        }
        let raw = take(&mut pos, len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Checkpoint(format!("array '{name}': {e}")))?;
        arrays.insert(name, arr);
    }
    Ok((header, arrays))
}

/// Fetch a named array or fail with a clear message.
pub fn require(arrays: &BTreeMap<String, Arr>, name: &str) -> Result<Arr> {
    arrays
        .get(name)
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("missing array '{name}'")))
}
