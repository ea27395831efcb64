//! `LFW1` weight container.
//!
//! ```text
//! "LFW1" | u32 LE header length | JSON header | f32 LE payload
//! ```
//!
//! The header is `{"config": .., "param_count": N, "tensors": [{"name",
//! "shape", "offset"}]}` with byte offsets relative to the payload start.
//! Tensors are stored row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, NetworkWeights, Tensor};

pub const MAGIC: &[u8; 4] = b"LFW1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    param_count: u64,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(weights: &NetworkWeights) -> Vec<u8> {
    let mut offset = 0u64;
    let tensors = weights
        .tensors()
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            };
            offset += 4 * t.len() as u64;
            e
        })
        .collect();
    let header = Header {
        config: weights.config().clone(),
        param_count: offset / 4,
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in weights.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<NetworkWeights> {
    let bad = |m: String| Error::Format(format!("LFW1: {m}"));
    if bytes.len() < 8 {
        return Err(bad(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let payload = bytes
        .get(8..)
        .and_then(|rest| rest.get(header_len..))
        .ok_or_else(|| bad(format!("header length {header_len} runs past end of file")))?;
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| bad(format!("header is not valid JSON: {e}")))?;
    header.config.validate()?;

    let specs = header.config.tensor_specs();
    if specs.len() != header.tensors.len() {
        return Err(bad(format!(
            "config implies {} tensors, header lists {}",
            specs.len(),
            header.tensors.len()
        )));
    }
    let mut total = 0u64;
    let mut ranges = Vec::with_capacity(specs.len());
    for ((name, shape), e) in specs.iter().zip(&header.tensors) {
        if &e.name != name || &e.shape != shape {
            return Err(bad(format!(
                "tensor {} {:?} inconsistent with config (expected {name} {shape:?})",
                e.name, e.shape
            )));
        }
        let count = shape.iter().product::<usize>() as u64;
        let end = count
            .checked_mul(4)
            .and_then(|b| e.offset.checked_add(b))
            .ok_or_else(|| bad(format!("tensor {name} extent overflows")))?;
        if e.offset % 4 != 0 {
            return Err(bad(format!("tensor {name} offset {} is not 4-byte aligned", e.offset)));
        }
        if end > payload.len() as u64 {
            return Err(bad(format!(
                "tensor {name} needs bytes {}..{end}, payload has {} (truncated)",
                e.offset,
                payload.len()
            )));
        }
        ranges.push((e.offset, end, name.clone()));
        total += count;
    }
    if header.param_count != total {
        return Err(bad(format!(
            "param_count {} but tensors hold {total}",
            header.param_count
        )));
    }
    let mut sorted = ranges.clone();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(bad(format!("tensors {} and {} overlap", pair[0].2, pair[1].2)));
        }
    }
    if payload.len() as u64 != 4 * total {
        return Err(bad(format!(
            "payload is {} bytes, tensors account for {}",
            payload.len(),
            4 * total
        )));
    }

    let tensors = specs
        .into_iter()
        .zip(ranges)
        .map(|((name, shape), (start, end, _))| {
            let data = payload[start as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor { name, shape, data }
        })
        .collect();
    NetworkWeights::new(header.config, tensors)
}

pub fn save_weights(weights: &NetworkWeights, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
