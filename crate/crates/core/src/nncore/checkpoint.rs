//! Flat binary array files with a JSON index.
//!
//! `<stem>.bin` holds the little-endian values of every array back to back;
//! `<stem>.json` lists `(name, shape, offset, dtype)` per array plus a
//! free-form header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the `.bin` file.
    pub offset: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub header: serde_json::Value,
}

pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn save_arrays<T: Real>(stem: &Path, arrays: &[(String, &Tensor<T>)], header: serde_json::Value) -> Result<()> {
    let (bin, json) = checkpoint_paths(stem);
    if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(arrays.len());
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: bytes.len(),
            dtype: T::DTYPE.to_string(),
        });
        t.data().iter().for_each(|v| v.write_le(&mut bytes));
    }
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let index = CheckpointIndex { arrays: entries, header };
    fs::write(&json, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn read_index(stem: &Path) -> Result<CheckpointIndex> {
    let (_, json) = checkpoint_paths(stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_arrays<T: Real>(stem: &Path) -> Result<(Vec<(String, Tensor<T>)>, serde_json::Value)> {
    let index = read_index(stem)?;
    let (bin, _) = checkpoint_paths(stem);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut out = Vec::with_capacity(index.arrays.len());
    for e in index.arrays {
        if e.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("array `{}` is {}, expected {}", e.name, e.dtype, T::DTYPE)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * T::BYTES;
        let slice = bytes
            .get(e.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("array `{}` runs past end of file", e.name)))?;
        let data = slice.chunks_exact(T::BYTES).map(T::read_le).collect();
        out.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok((out, index.header))
}
