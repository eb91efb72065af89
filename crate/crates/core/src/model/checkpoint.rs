//! Binary tensor container.
//!
//! Layout: the ASCII magic `OCTO1`, a little-endian `u64` byte length, a
//! UTF-8 JSON manifest of `{name, shape, offset}` entries (offset in bytes
//! from the start of the data section), then the raw little-endian `f32`
//! values of every tensor in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"OCTO1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

/// A named `f32` array as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(arrays.len());
    let mut offset = 0u64;
    for a in arrays {
        let n: usize = a.shape.iter().product();
        if n != a.data.len() || a.shape.is_empty() {
            return Err(Error::shape(format!("array {} has shape {:?} but {} values", a.name, a.shape, a.data.len())));
        }
        manifest.push(ManifestEntry {
            name: a.name.clone(),
            shape: a.shape.clone(),
            offset,
        });
        offset += 4 * n as u64;
    }
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for a in arrays {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("missing OCTO1 magic"))?;
    if rest.len() < 8 {
        return Err(bad("truncated manifest length"));
    }
    let (len_bytes, rest) = rest.split_at(8);
    let manifest_len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes"));
    if manifest_len > rest.len() as u64 {
        return Err(bad("manifest length exceeds file size"));
    }
    let (json, data) = rest.split_at(manifest_len as usize);
    let text = std::str::from_utf8(json).map_err(|_| bad("manifest is not UTF-8"))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(text).map_err(|e| bad(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(manifest.len());
    let mut expected = 0u64;
    for entry in manifest {
        if entry.shape.is_empty() || entry.shape.contains(&0) {
            return Err(bad(format!("tensor {} has an empty shape", entry.name)));
        }
        let n = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= data.len() / 4)
            .ok_or_else(|| bad(format!("tensor {} is larger than the data section", entry.name)))?;
        if entry.offset != expected {
            return Err(bad(format!("tensor {} at offset {} but expected {expected}", entry.name, entry.offset)));
        }
        let start = expected as usize;
        let end = start + 4 * n;
        if end > data.len() {
            return Err(bad(format!("tensor {} runs past the end of the file", entry.name)));
        }
        let values = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(NamedArray {
            name: entry.name,
            shape: entry.shape,
            data: values,
        });
        expected = end as u64;
    }
    if expected as usize != data.len() {
        return Err(bad(format!("{} trailing bytes after the last tensor", data.len() - expected as usize)));
    }
    Ok(out)
}

pub fn write_file(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    std::fs::write(path, encode(arrays)?)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<NamedArray>> {
    decode(&std::fs::read(path)?)
}
