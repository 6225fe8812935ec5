//! Binary parameter files.
//!
//! Layout (little-endian): magic `FAPV`, u32 format version, u32 FNV-1a hash of
//! the model's canonical config text, u64 parameter count, then the raw f64s.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Layout, ModelConfig, ParamVector};

pub const MAGIC: [u8; 4] = *b"FAPV";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub fn encode_params(params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.config().config_hash().to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8], config: &ModelConfig) -> std::result::Result<ParamVector, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("file is {} bytes, shorter than the header", bytes.len()));
    }
    if bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let hash = u32_at(8);
    if hash != config.config_hash() {
        return Err(format!(
            "config hash {hash:#010x} does not match expected {:#010x}",
            config.config_hash()
        ));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let layout = Layout::new(config).map_err(|e| e.to_string())?;
    if count != layout.len() {
        return Err(format!("parameter count {count} does not match layout {}", layout.len()));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * count {
        return Err(format!("expected {} payload bytes, found {}", 8 * count, body.len()));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::from_values(Arc::new(layout), values).map_err(|e| e.to_string())
}

pub fn save_params(path: impl AsRef<Path>, params: &ParamVector) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ParamVector> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, config).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}
