//! Parameter checkpoint files.
//!
//! Layout: one JSON header line (version, step, parameter names + shapes,
//! caller-supplied metadata), then the raw little-endian f64 buffers in
//! header order, then a SHA-256 checksum of everything before it.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::params::ParamSet;
use crate::numeric::tensor::Tensor;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    params: Vec<ParamHeader>,
    /// Model hyperparameters and similar caller state.
    meta: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, params: &ParamSet, meta: &serde_json::Value) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        step: params.step,
        params: params
            .iter()
            .map(|(name, entry)| ParamHeader {
                name: name.to_string(),
                shape: entry.value.shape().to_vec(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    for (_, entry) in params.iter() {
        for v in entry.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Load a checkpoint, returning the parameters (gradients and Adam moments
/// zeroed), the stored step counter, and the metadata blob.
pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, serde_json::Value)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    if bytes.len() < 32 {
        return Err(Error::Format("checkpoint file too short".into()));
    }
    let (body, stored_digest) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_digest {
        return Err(Error::Checksum {
            expected: hex(stored_digest),
            actual: hex(&digest),
        });
    }

    let newline = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(&body[..newline])
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.version.to_string(),
            supported: CHECKPOINT_VERSION.to_string(),
        });
    }

    let payload = &body[newline + 1..];
    let expected_len: usize = header
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>() * 8)
        .sum();
    if payload.len() != expected_len {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, header implies {}",
            payload.len(),
            expected_len
        )));
    }

    let mut params = ParamSet::new();
    let mut offset = 0;
    for p in &header.params {
        let count: usize = p.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&payload[offset..offset + 8]);
            data.push(f64::from_le_bytes(buf));
            offset += 8;
        }
        params.insert(&p.name, Tensor::from_vec(&p.shape, data)?);
    }
    params.step = header.step;
    Ok((params, header.meta))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
