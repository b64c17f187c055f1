//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes          | content                                        |
//! |----------------|------------------------------------------------|
//! | 8              | magic `GBXCKPT\0`                              |
//! | 4              | format version (u32, currently 1)              |
//! | 8              | header length H (u64)                          |
//! | H              | UTF-8 JSON header, see [`CheckpointHeader`]    |
//! | 8 · param_count| parameters as f64, in canonical flat order     |
//!
//! Trailing bytes are rejected.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{param_count, ModelConfig, ModelParameters};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"GBXCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub param_count: usize,
    /// Free-form training metadata (seeds, configs, metrics).
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParameters, metadata: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader { config: params.config().clone(), param_count: params.len(), metadata };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelParameters, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let header_len = usize::try_from(u64::from_le_bytes(long)).map_err(|_| Error::Format("header too large".into()))?;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    if header.param_count != param_count(&header.config) {
        return Err(Error::Format("parameter count disagrees with config".into()));
    }
    let mut values = Vec::with_capacity(header.param_count);
    for _ in 0..header.param_count {
        r.read_exact(&mut long)?;
        values.push(f64::from_le_bytes(long));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let params = ModelParameters::from_flat(header.config.clone(), values)?;
    Ok((params, header))
}
