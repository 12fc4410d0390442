//! Parameter files.
//!
//! Two containers are supported. The binary form (`.mmp`) is, all integers
//! little-endian:
//!
//! ```text
//! magic        4 bytes   "MMPR"
//! version      u32       1
//! tag_len      u32       byte length of the architecture tag
//! tag          tag_len   UTF-8, e.g. "in16x16-conv0-h32-c2-tanh"
//! n_layers     u32
//! per layer:
//!   rows       u32
//!   cols       u32
//!   weights    rows*cols f64, row-major
//!   bias_len   u32
//!   bias       bias_len f64
//! ```
//!
//! The JSON form carries the same fields:
//! `{"format_version":1,"architecture_tag":..,"layers":[{"rows":..,"cols":..,"weights":[..],"bias":[..]}]}`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Architecture, Layer, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MMPR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFormat {
    Binary,
    Json,
}

impl ParamFormat {
    /// `.json` selects JSON, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ParamFormat::Json,
            _ => ParamFormat::Binary,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonParams {
    format_version: u32,
    architecture_tag: String,
    layers: Vec<JsonLayer>,
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tag = self.architecture_tag();
        let mut out = Vec::with_capacity(16 + tag.len() + 8 * self.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            let (r, c) = layer.weights.dim();
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            for v in layer.weights.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(layer.bias.len() as u32).to_le_bytes());
            for v in layer.bias.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::contract("not a parameter file (bad magic)"));
        }
        let version = read_u32(&mut bytes)?;
        if version != VERSION {
            return Err(Error::contract(format!("unsupported parameter file version {version}")));
        }
        let tag_len = read_u32(&mut bytes)? as usize;
        if tag_len > bytes.len() {
            return Err(Error::contract("truncated parameter file"));
        }
        let (tag, rest) = bytes.split_at(tag_len);
        bytes = rest;
        let tag = std::str::from_utf8(tag).map_err(|_| Error::contract("tag is not UTF-8"))?;
        let architecture: Architecture = tag.parse()?;
        let n_layers = read_u32(&mut bytes)? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let rows = read_u32(&mut bytes)? as usize;
            let cols = read_u32(&mut bytes)? as usize;
            let weights = read_f64s(&mut bytes, rows * cols)?;
            let bias_len = read_u32(&mut bytes)? as usize;
            let bias = read_f64s(&mut bytes, bias_len)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((rows, cols), weights)
                    .map_err(|e| Error::contract(e.to_string()))?,
                bias: Array1::from(bias),
            });
        }
        if !bytes.is_empty() {
            return Err(Error::contract("trailing bytes after parameter data"));
        }
        ModelParams::from_layers(architecture, layers)
    }

    pub fn to_json(&self) -> String {
        let doc = JsonParams {
            format_version: VERSION,
            architecture_tag: self.architecture_tag(),
            layers: self
                .layers
                .iter()
                .map(|l| JsonLayer {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: JsonParams =
            serde_json::from_str(text).map_err(|e| Error::contract(e.to_string()))?;
        if doc.format_version != VERSION {
            return Err(Error::contract(format!(
                "unsupported parameter file version {}",
                doc.format_version
            )));
        }
        let architecture: Architecture = doc.architecture_tag.parse()?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weights: Array2::from_shape_vec((l.rows, l.cols), l.weights)
                        .map_err(|e| Error::contract(e.to_string()))?,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_layers(architecture, layers)
    }
}

fn read_exact(bytes: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    bytes
        .read_exact(buf)
        .map_err(|_| Error::contract("truncated parameter file"))
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(bytes, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(bytes: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if n.checked_mul(8).is_none_or(|len| len > bytes.len()) {
        return Err(Error::contract("truncated parameter file"));
    }
    let (data, rest) = bytes.split_at(n * 8);
    *bytes = rest;
    Ok(data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = match ParamFormat::from_path(path) {
        ParamFormat::Binary => params.to_bytes(),
        ParamFormat::Json => params.to_json().into_bytes(),
    };
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = match ParamFormat::from_path(path) {
        ParamFormat::Binary => ModelParams::from_bytes(&bytes),
        ParamFormat::Json => std::str::from_utf8(&bytes)
            .map_err(|_| Error::contract("parameter JSON is not UTF-8"))
            .and_then(ModelParams::from_json),
    };
    parsed.map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ClassifierConfig};

    fn params() -> ModelParams {
        init_model(&ClassifierConfig {
            seed: 4,
            conv_channels: 2,
            ..ClassifierConfig::mlp(6, 6, vec![5, 3])
        })
        .unwrap()
    }

    #[test]
    fn binary_layout_header() {
        let p = params();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"MMPR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let tag_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(&bytes[12..12 + tag_len], p.architecture_tag().as_bytes());
        let expected = 4 + 4 + 4 + tag_len + 4
            + p.layers
                .iter()
                .map(|l| 8 + 8 * l.weights.len() + 4 + 8 * l.bias.len())
                .sum::<usize>();
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = params().to_bytes();
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ModelParams::from_bytes(&extra).is_err());
    }

    #[test]
    fn files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = params();
        for name in ["p.mmp", "p.json"] {
            let path = dir.path().join(name);
            save_params(&p, &path).unwrap();
            assert_eq!(load_params(&path).unwrap(), p);
        }
    }
}
