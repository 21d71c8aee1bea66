//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `TCAPSCK1`, the header length as a
//! little-endian `u64`, a JSON header holding the model configuration and a
//! manifest of `(name, shape, offset)` entries, then every tensor as raw
//! little-endian `f64` values in manifest order. Offsets count bytes from
//! the start of the data section.
//!
//! Loading validates the whole file before returning anything.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{param_layout, ModelConfig, ModelParams};
use crate::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"TCAPSCK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
}

fn ck_err(tensor: &str, reason: impl Into<String>) -> Error {
    Error::Checkpoint { tensor: tensor.to_string(), reason: reason.into() }
}

/// Serialises parameters and configuration to bytes.
pub fn encode<T: Scalar>(params: &ModelParams<T>, cfg: &ModelConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    params.check_layout(cfg)?;
    let mut offset = 0u64;
    let tensors = params
        .entries()
        .into_iter()
        .map(|(name, t)| {
            let e = ManifestEntry { name, shape: t.shape().to_vec(), offset };
            offset += 8 * t.numel() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header { config: cfg.clone(), tensors }).expect("header serialises");
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.flat_refs() {
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses bytes produced by [`encode`].
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(ModelParams<T>, ModelConfig)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ck_err("header", "missing checkpoint signature"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| ck_err("header", format!("header length {header_len} exceeds the file")))?
        as usize;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| ck_err("header", format!("corrupted manifest: {e}")))?;
    header.config.validate().map_err(|e| ck_err("config", e.to_string()))?;

    let layout = param_layout(&header.config);
    let expected = layout.entries();
    if header.tensors.len() != expected.len() {
        return Err(ck_err(
            "manifest",
            format!("{} tensors listed, configuration needs {}", header.tensors.len(), expected.len()),
        ));
    }
    let data = &bytes[header_end..];
    let mut cursor = 0u64;
    let mut tensors = Vec::with_capacity(expected.len());
    for (entry, (name, shape)) in header.tensors.iter().zip(expected) {
        if entry.name != name {
            return Err(ck_err(&entry.name, format!("expected tensor `{name}` at this position")));
        }
        if &entry.shape != shape {
            return Err(ck_err(&name, format!("shape {:?} does not match configuration {:?}", entry.shape, shape)));
        }
        if entry.offset != cursor {
            return Err(ck_err(&name, format!("offset {} should be {cursor}", entry.offset)));
        }
        let len = 8 * shape.iter().product::<usize>() as u64;
        let end = cursor + len;
        if end > data.len() as u64 {
            return Err(ck_err(&name, format!("truncated: needs bytes {cursor}..{end} of {}", data.len())));
        }
        let values = data[cursor as usize..end as usize]
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        tensors.push(Tensor::new(shape.clone(), values).map_err(|e| ck_err(&name, e.to_string()))?);
        cursor = end;
    }
    if cursor != data.len() as u64 {
        return Err(ck_err("data", format!("{} unexpected trailing bytes", data.len() as u64 - cursor)));
    }
    let params = layout.with_flat(tensors)?;
    Ok((params, header.config))
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, cfg: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(params, cfg)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, ModelConfig)> {
    decode(&fs::read(path)?)
}
