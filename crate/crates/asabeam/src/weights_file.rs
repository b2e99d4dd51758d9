//! The `ASAW` weights file.
//!
//! Layout: magic `ASAW`, format version (u16 LE), header length (u32 LE),
//! JSON header padded with spaces so the data starts on a 64-byte boundary,
//! raw little-endian f64 tensor data, and a trailing CRC-32 (u32 LE) of
//! every preceding byte. The header carries the estimator config, the
//! ordered tensor table (name, dtype, shape, byte offset) and free-form
//! metadata. Checkpoints append Adam moments as `adam.m/<name>` and
//! `adam.v/<name>` tensors.

use std::collections::BTreeMap;
use std::path::Path;

use asabeam_core::estimator::{EstimatorConfig, ModelWeights};
use asabeam_core::tensor::Tensor;
use asabeam_core::training::AdamState;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 4] = b"ASAW";
pub const FORMAT_VERSION: u16 = 1;
const ALIGN: usize = 64;
const PREFIX: usize = 4 + 2 + 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: EstimatorConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    adam_step: Option<u64>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Weights with optional optimizer state and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightsFile {
    pub weights: ModelWeights,
    pub adam: Option<AdamState>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl WeightsFile {
    pub fn new(weights: ModelWeights) -> Self {
        WeightsFile {
            weights,
            adam: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut named: Vec<(String, &Tensor)> =
            self.weights.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(adam) = &self.adam {
            for (prefix, moments) in [("adam.m/", &adam.m), ("adam.v/", &adam.v)] {
                for (n, t) in self.weights.names().iter().zip(moments) {
                    named.push((format!("{}{}", prefix, n), t));
                }
            }
        }
        let mut offset = 0;
        let tensors = named
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    dtype: "real64".into(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel() * 8;
                e
            })
            .collect();
        let header = Header {
            config: self.weights.config().clone(),
            tensors,
            adam_step: self.adam.as_ref().map(|a| a.step),
            metadata: self.metadata.clone(),
        };
        let mut json = serde_json::to_vec(&header).expect("header serializes");
        while !(PREFIX + json.len()).is_multiple_of(ALIGN) {
            json.push(b' ');
        }
        let mut out = Vec::with_capacity(PREFIX + json.len() + offset + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &named {
            for v in t.re() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and validates a whole file; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| AppError::format(path, m);
        if bytes.len() < PREFIX + 4 {
            return Err(bad(format!("file is {} bytes, too short for a header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", version)));
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let body = bytes.len() - 4;
        if PREFIX + hlen > body {
            return Err(bad(format!("header length {} runs past the end of the file", hlen)));
        }
        let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
        if crc32fast::hash(&bytes[..body]) != stored {
            return Err(bad("checksum mismatch (truncated or corrupted file)".into()));
        }
        if !(PREFIX + hlen).is_multiple_of(ALIGN) {
            return Err(bad("header is not padded to a 64-byte boundary".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[PREFIX..PREFIX + hlen])
            .map_err(|e| bad(format!("header: {}", e)))?;
        let data = &bytes[PREFIX + hlen..body];
        let mut expected = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            if e.dtype != "real64" {
                return Err(bad(format!("tensor `{}` has unsupported dtype `{}`", e.name, e.dtype)));
            }
            if e.offset != expected {
                return Err(bad(format!("tensor `{}` at offset {} but {} expected", e.name, e.offset, expected)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * 8;
            if end > data.len() {
                return Err(bad(format!("tensor `{}` runs past the end of the data", e.name)));
            }
            let values: Vec<f64> = data[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::real(&e.shape, values).map_err(|err| bad(err.to_string()))?;
            tensors.push((e.name.clone(), t));
            expected = end;
        }
        if expected != data.len() {
            return Err(bad(format!("{} trailing data bytes", data.len() - expected)));
        }
        let (mut model, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for (name, t) in tensors {
            if let Some(rest) = name.strip_prefix("adam.m/") {
                m.push((rest.to_string(), t));
            } else if let Some(rest) = name.strip_prefix("adam.v/") {
                v.push((rest.to_string(), t));
            } else {
                model.push((name, t));
            }
        }
        let names: Vec<String> = model.iter().map(|(n, _)| n.clone()).collect();
        let weights = ModelWeights::new(header.config, model)
            .map_err(|e| bad(format!("header config does not match the tensor table: {}", e)))?;
        let adam = match header.adam_step {
            None if m.is_empty() && v.is_empty() => None,
            Some(step) => {
                let same = |xs: &[(String, Tensor)]| xs.iter().map(|(n, _)| n).eq(names.iter());
                if !same(&m) || !same(&v) {
                    return Err(bad("optimizer moments do not match the parameter table".into()));
                }
                let state = AdamState {
                    step,
                    m: m.into_iter().map(|(_, t)| t).collect(),
                    v: v.into_iter().map(|(_, t)| t).collect(),
                };
                state.check(&weights).map_err(|e| bad(e.to_string()))?;
                Some(state)
            }
            None => return Err(bad("optimizer moments without a step count".into())),
        };
        Ok(WeightsFile {
            weights,
            adam,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
        WeightsFile::from_bytes(&bytes, path)
    }
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    WeightsFile::new(weights.clone()).save(path)
}

/// Loads the estimator weights and their config.
pub fn load_weights(path: impl AsRef<Path>) -> Result<(ModelWeights, EstimatorConfig)> {
    let f = WeightsFile::load(path)?;
    let cfg = f.weights.config().clone();
    Ok((f.weights, cfg))
}
