//! Versioned binary checkpoints.
//!
//! Layout: the 8 magic bytes `ADVEST01`, a little-endian `u32` format
//! version, the 32-byte config hash, a little-endian `u64` body length, then
//! the CBOR-encoded [`Checkpoint`] body. The body holds the complete trainer
//! (networks, optimizer moments, every RNG, environments, buffers and log),
//! so resuming continues the run exactly.

use std::io::Read;
use std::path::Path;

use advest_core::envs::AnyEnv;
use advest_core::ppo::Trainer;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"ADVEST01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub env: EnvConfig,
    pub trainer: Trainer<AnyEnv>,
}

fn invalid(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode(hash: &[u8; 32], checkpoint: &Checkpoint) -> Vec<u8> {
    let mut body = Vec::new();
    ciborium::into_writer(checkpoint, &mut body).expect("in-memory CBOR encoding cannot fail");
    let mut out = Vec::with_capacity(52 + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(hash);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<([u8; 32], Checkpoint)> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    let mut version = [0u8; 4];
    let mut hash = [0u8; 32];
    let mut len = [0u8; 8];
    for buf in [&mut magic[..], &mut version[..], &mut hash[..], &mut len[..]] {
        r.read_exact(buf).map_err(|_| invalid(path, "truncated header"))?;
    }
    if &magic != MAGIC {
        return Err(invalid(path, "not an advest checkpoint (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(invalid(
            path,
            format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let len = u64::from_le_bytes(len);
    if r.len() as u64 != len {
        return Err(invalid(path, format!("body is {} bytes, header says {len}", r.len())));
    }
    let checkpoint = ciborium::from_reader(r).map_err(|e| invalid(path, format!("corrupt body: {e}")))?;
    Ok((hash, checkpoint))
}

pub fn save(path: &Path, hash: &[u8; 32], checkpoint: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    std::fs::write(path, encode(hash, checkpoint)).map_err(HarnessError::io(path))
}

pub fn load(path: &Path) -> Result<([u8; 32], Checkpoint)> {
    let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
    decode(path, &bytes)
}
