//! Checkpoint files: an 8-byte magic, a little-endian `u64` header length, a
//! JSON header, then every tensor as little-endian `f64` values.
//!
//! Header tensor entries carry `group`, `name`, `rows`, `cols` and the byte
//! `offset` of the tensor relative to the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"LSJCKPT1";

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optimizer: Option<OptimizerSnapshot>,
    /// Position of the training random stream, for exact resumption.
    pub rng_word_pos: Option<u128>,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    optimizer_step: Option<u64>,
    #[serde(default)]
    rng_word_pos: Option<String>,
    #[serde(default)]
    metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            config,
            params,
            optimizer: None,
            rng_word_pos: None,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut groups: Vec<(&str, &ModelParams)> = vec![("params", &self.params)];
        if let Some(opt) = &self.optimizer {
            groups.push(("adam_m", &opt.first_moment));
            groups.push(("adam_v", &opt.second_moment));
        }
        let mut tensors = Vec::new();
        let mut data: Vec<u8> = Vec::new();
        for (group, params) in groups {
            for (name, m) in params.iter() {
                tensors.push(TensorEntry {
                    group: group.to_string(),
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    offset: data.len(),
                });
                for v in m.as_slice() {
                    data.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            format: "lsjstn-checkpoint".into(),
            config: self.config.clone(),
            tensors,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            rng_word_pos: self.rng_word_pos.map(|p| p.to_string()),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("malformed checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let data = &body[hlen..];
        let mut params = ModelParams::new();
        let mut first = ModelParams::new();
        let mut second = ModelParams::new();
        for t in header.tensors {
            let n = t.rows * t.cols;
            let raw = data
                .get(t.offset..t.offset + 8 * n)
                .ok_or_else(|| bad(&format!("tensor {} out of bounds", t.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_vec(t.rows, t.cols, values)?;
            match t.group.as_str() {
                "params" => params.insert(t.name, m)?,
                "adam_m" => first.insert(t.name, m)?,
                "adam_v" => second.insert(t.name, m)?,
                other => return Err(bad(&format!("unknown tensor group {other}"))),
            }
        }
        let optimizer = header.optimizer_step.map(|step| OptimizerSnapshot {
            step,
            first_moment: first,
            second_moment: second,
        });
        let rng_word_pos = header
            .rng_word_pos
            .map(|s| s.parse::<u128>().map_err(|_| bad("rng position")))
            .transpose()?;
        Ok(Checkpoint {
            config: header.config,
            params,
            optimizer,
            rng_word_pos,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
