//! Single-file parameter store shared by the predictor and the transformer.
//!
//! Layout: `SKPW`, a `u32` LE manifest length, the JSON manifest, then every
//! tensor as `f32` LE in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKPW";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub architecture: String,
    /// Architecture-specific settings (channels, widths, seed, ...).
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightsFile {
    pub manifest: Manifest,
    pub data: Vec<Vec<f32>>,
}

impl WeightsFile {
    pub fn new(architecture: &str, config: serde_json::Value) -> Self {
        Self {
            manifest: Manifest {
                architecture: architecture.to_string(),
                config,
                tensors: Vec::new(),
            },
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], values: impl IntoIterator<Item = f32>) {
        let values: Vec<f32> = values.into_iter().collect();
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.manifest.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        self.data.push(values);
    }

    /// Look up a tensor by name and check its shape.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let k = self
            .manifest
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Corrupt(format!("weights missing tensor {name}")))?;
        if self.manifest.tensors[k].shape != shape {
            return Err(Error::Corrupt(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                self.manifest.tensors[k].shape
            )));
        }
        Ok(&self.data[k])
    }

    pub fn expect_architecture(&self, arch: &str) -> Result<()> {
        if self.manifest.architecture != arch {
            return Err(Error::Format(format!(
                "weights are for {}, expected {arch}",
                self.manifest.architecture
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let total: usize = self.data.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(8 + manifest.len() + 4 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for x in self.data.iter().flatten() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a SKPW weights file".into()));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let manifest_bytes = bytes
            .get(8..8 + n)
            .ok_or_else(|| Error::Corrupt("weights manifest truncated".into()))?;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)?;
        let mut blob = bytes[8 + n..].chunks_exact(4);
        let want: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if blob.len() != want || !blob.remainder().is_empty() {
            return Err(Error::Corrupt(format!(
                "weights blob has {} bytes, manifest needs {}",
                bytes.len() - 8 - n,
                4 * want
            )));
        }
        let mut data = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            let len = t.shape.iter().product::<usize>();
            let values: Vec<f32> = blob
                .by_ref()
                .take(len)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Corrupt(format!("tensor {} has non-finite values", t.name)));
            }
            data.push(values);
        }
        Ok(Self { manifest, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightsFile {
        let mut w = WeightsFile::new("demo", serde_json::json!({"width": 3}));
        w.push("a", &[2, 3], (0..6).map(|x| x as f32 * 0.5));
        w.push("b", &[1], [-1.25]);
        w
    }

    #[test]
    fn round_trip_preserves_everything() {
        let w = sample();
        let back = WeightsFile::from_bytes(&w.to_bytes().unwrap()).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.tensor("b", &[1]).unwrap(), &[-1.25]);
    }

    #[test]
    fn blob_follows_manifest_in_order() {
        let bytes = sample().to_bytes().unwrap();
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let blob = &bytes[8 + n..];
        assert_eq!(blob.len(), 7 * 4);
        assert_eq!(&blob[24..28], &(-1.25f32).to_le_bytes());
    }

    #[test]
    fn truncation_and_shape_errors() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            WeightsFile::from_bytes(&bytes[..bytes.len() - 4]),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(WeightsFile::from_bytes(b"nope"), Err(Error::Format(_))));
        assert!(sample().tensor("a", &[3, 2]).is_err());
        assert!(sample().tensor("zz", &[1]).is_err());
    }
}
