// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model file format.
//!
//! One line of JSON header followed by raw little-endian `f32` tensor data:
//!
//! ```text
//! {"format_version":1,"n_layers":2,...,"tensors":{"embed.tok":{"shape":[V,D],"dtype":"f32","offset":0},...}}\n
//! <tensor bytes>
//! ```
//!
//! Offsets are byte positions relative to the first byte after the newline.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{Model, Weights};
use crate::error::{Error, FormatError, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    #[serde(flatten)]
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, TensorEntry>,
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut tensors = BTreeMap::new();
    let mut data = Vec::new();
    for (name, shape, values) in model.weights().named_tensors() {
        tensors.insert(
            name,
            TensorEntry {
                shape,
                dtype: "f32".into(),
                offset: data.len(),
            },
        );
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        config: *model.config(),
        tensors,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&data);
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::MalformedHeader("no header line".into()))?;
    let header_value: serde_json::Value = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    let version = header_value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| FormatError::MalformedHeader("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION as u64 {
        return Err(FormatError::UnsupportedVersion {
            found: version as u32,
            expected: MODEL_FORMAT_VERSION,
        }
        .into());
    }
    let header: ModelHeader = serde_json::from_value(header_value)
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    header
        .config
        .validate()
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    let data = &bytes[newline + 1..];

    let mut weights = Weights::zeros(&header.config);
    let expected: Vec<(String, Vec<usize>)> = weights
        .named_tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    if let Some(extra) = header
        .tensors
        .keys()
        .find(|k| !expected.iter().any(|(n, _)| n == *k))
    {
        return Err(FormatError::MalformedHeader(format!("unexpected tensor `{extra}`")).into());
    }
    for ((name, shape), dest) in expected.iter().zip(weights.tensors_mut()) {
        let entry = header
            .tensors
            .get(name)
            .ok_or_else(|| FormatError::MissingTensor(name.clone()))?;
        if entry.dtype != "f32" {
            return Err(FormatError::MalformedHeader(format!(
                "tensor `{name}` has dtype {}",
                entry.dtype
            ))
            .into());
        }
        if &entry.shape != shape {
            return Err(FormatError::SizeMismatch {
                tensor: name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            }
            .into());
        }
        let end = entry.offset + dest.len() * 4;
        if end > data.len() {
            return Err(FormatError::Truncated {
                tensor: name.clone(),
                needed: end,
                available: data.len(),
            }
            .into());
        }
        for (v, chunk) in dest.iter_mut().zip(data[entry.offset..end].chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    Model::new(header.config, weights)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = fs::read(path).map_err(Error::Io)?;
    decode_model(&bytes)
}
