//! Named-array archive used for every persisted model.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `PTCK` |
//! | 4 | `u32` format version |
//! | 8 | `u64` header length `L` |
//! | L | UTF-8 JSON header `{"meta": …, "arrays": [{"name", "shape", "offset"}]}` |
//! | … | `f64` array data; `offset` counts values from the start of this block |

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use portrait_autograd::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// Named arrays plus a free-form JSON record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub arrays: BTreeMap<String, Tensor>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, arrays: BTreeMap::new() }
    }

    /// Add every entry of `store` under `prefix`.
    pub fn put_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.arrays.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn take_store(&self, prefix: &str) -> ParamStore {
        self.arrays
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.arrays.len());
        for (name, t) in &self.arrays {
            entries.push(ArrayEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += t.len();
        }
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), arrays: entries }).expect("JSON header");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.arrays.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported archive version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end]).map_err(|e| Error::format(path, e))?;
        let data = &bytes[header_end..];
        let mut arrays = BTreeMap::new();
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let (start, end) = (8 * e.offset, 8 * (e.offset + n));
            if end > data.len() {
                return Err(bad(&format!("array `{}` extends past the end of the file", e.name)));
            }
            let values = data[start..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.insert(e.name, Tensor::new(e.shape, values));
        }
        Ok(Self { meta: header.meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(Error::io(&tmp))?;
        f.write_all(&self.to_bytes()).map_err(Error::io(&tmp))?;
        f.sync_all().map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn array(&self, name: &str) -> Result<&Tensor> {
        self.arrays.get(name).ok_or_else(|| Error::Value(format!("archive has no array `{name}`")))
    }

    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| Error::Value(format!("archive header lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Value(format!("archive field `{key}`: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let mut a = Archive::new(serde_json::json!({"kind": "test", "step": 3}));
        a.arrays.insert("x".into(), Tensor::new([2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]));
        a.arrays.insert("y".into(), Tensor::new([1], vec![std::f64::consts::PI]));
        let back = Archive::from_bytes(&a.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.meta, a.meta);
        for (k, t) in &a.arrays {
            assert!(back.arrays[k].bit_eq(t));
        }
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(Archive::from_bytes(b"NOPE0000000000000000", Path::new("x")).is_err());
        let mut a = Archive::new(serde_json::json!({}));
        a.arrays.insert("x".into(), Tensor::zeros([4]));
        let bytes = a.to_bytes();
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }
}
