//! Single-file container: magic, format version, a JSON metadata record
//! and little-endian `f32` arrays in the order the metadata lists them.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use semtex_tensor::{ParamSet, Tensor};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SEMTEXCK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    arrays: Vec<ArrayEntry>,
}

/// Named arrays plus caller-defined metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Container<M> {
    pub meta: M,
    pub arrays: Vec<(String, Tensor<f32>)>,
}

impl<M> Container<M> {
    pub fn new(meta: M) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    /// Appends every tensor of `ps` under `prefix.`.
    pub fn push_params(&mut self, prefix: &str, ps: &ParamSet<f32>) {
        for (name, t) in ps.iter() {
            self.arrays.push((format!("{prefix}.{name}"), t.clone()));
        }
    }

    pub fn push(&mut self, name: String, t: Tensor<f32>) {
        self.arrays.push((name, t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every tensor of `ps` from the `prefix.` arrays.
    pub fn fill_params(&self, prefix: &str, ps: &mut ParamSet<f32>) -> Result<()> {
        let names: Vec<String> = ps.names().to_vec();
        for (name, dst) in names.iter().zip(ps.tensors_mut()) {
            let key = format!("{prefix}.{name}");
            let src = self
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {key}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Checkpoint(format!(
                    "array {key} has shape {:?}, model expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.arrays.iter().any(|(n, _)| n.starts_with(&p))
    }
}

impl<M: Serialize> Container<M> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: &self.meta,
            arrays: self
                .arrays
                .iter()
                .map(|(n, t)| ArrayEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + self.arrays.iter().map(|(_, t)| 4 * t.numel()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!(
            "file truncated: needed {n} more bytes, {} left",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

impl<M: DeserializeOwned> Container<M> {
    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let b = &mut bytes;
        if take(b, 8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(take(b, 8)?.try_into().expect("8 bytes")) as usize;
        let header: Header<M> =
            serde_json::from_slice(take(b, len)?).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let raw = take(b, 4 * n)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            arrays.push((entry.name, Tensor::from_vec(&entry.shape, data)));
        }
        if !b.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", b.len())));
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// SHA-256 over parameter names, shapes and raw bits, as hex.
pub fn param_hash(ps: &ParamSet<f32>) -> String {
    let mut h = Sha256::new();
    for (name, t) in ps.iter() {
        h.update(name.as_bytes());
        h.update([0]);
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container<serde_json::Value> {
        let mut c = Container::new(serde_json::json!({"stage": 2, "lr": 0.1, "x": f64::MIN_POSITIVE}));
        c.push("a.w".into(), Tensor::from_vec(&[2, 2], vec![1.0, -0.0, f32::MAX, 1e-40]));
        c.push("b".into(), Tensor::from_vec(&[0], vec![]));
        c
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::<serde_json::Value>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.get("a.w").unwrap().data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn truncation_and_version_errors() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 5, 12, 30, bytes.len() - 1] {
            assert!(Container::<serde_json::Value>::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        match Container::<serde_json::Value>::from_bytes(&future) {
            Err(Error::CheckpointVersion { found, supported }) => {
                assert_eq!((found, supported), (FORMAT_VERSION + 1, FORMAT_VERSION));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn hash_sensitive_to_single_bit() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]));
        let h = param_hash(&ps);
        assert_eq!(h.len(), 64);
        let mut q = ps.clone();
        let v = &mut q.tensors_mut()[0].data_mut()[2];
        *v = f32::from_bits(v.to_bits() ^ 1);
        assert_ne!(param_hash(&q), h);
    }
}
