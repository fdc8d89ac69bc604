//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `ATTDETCK` |
//! | 4 | format version (`u32`) |
//! | 4 | header length `n` (`u32`) |
//! | n | UTF-8 JSON header `{"arch": .., "n_rx": .., "param_count": ..}` |
//! | 8 | parameter count (`u64`) |
//! | 8·count | parameters as `f64` in flattening order |
//! | 32 | SHA-256 of every preceding byte |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchConfig, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATTDETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    n_rx: usize,
    param_count: usize,
}

/// A decoded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub params: ModelParams<f64>,
    pub checksum: [u8; 32],
    /// Whether the stored checksum matches the content.
    pub checksum_valid: bool,
}

impl Checkpoint {
    pub fn encode<T: Scalar>(params: &ModelParams<T>) -> Result<Vec<u8>> {
        let header = Header { arch: params.arch().clone(), n_rx: params.n_rx(), param_count: params.len() };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidCheckpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + json.len() + 8 * params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in params.flat() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        let digest: [u8; 32] = Sha256::digest(&out).into();
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses a container without rejecting a bad checksum.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidCheckpoint(m.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated file"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("not an attdet checkpoint"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let header: Header =
            serde_json::from_slice(take(header_len)?).map_err(|e| Error::InvalidCheckpoint(format!("header: {e}")))?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != header.param_count {
            return Err(bad("parameter count disagrees with header"));
        }
        let raw = take(count.checked_mul(8).ok_or_else(|| bad("parameter count overflow"))?)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let checksum: [u8; 32] = take(32)?.try_into().unwrap();
        if !cur.is_empty() {
            return Err(bad("trailing bytes after checksum"));
        }
        let body = &bytes[..bytes.len() - 32];
        let checksum_valid = <[u8; 32]>::from(Sha256::digest(body)) == checksum;
        let params = ModelParams::from_flat(&header.arch, header.n_rx, values)?;
        Ok(Self { version, params, checksum, checksum_valid })
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut w: W) -> Result<()> {
    let bytes = Checkpoint::encode(params)?;
    w.write_all(&bytes).map_err(|e| Error::io("<writer>", e))
}

/// Reads and verifies a checkpoint.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<reader>", e))?;
    let ck = Checkpoint::decode(&bytes)?;
    if !ck.checksum_valid {
        return Err(Error::InvalidCheckpoint("checksum mismatch".into()));
    }
    Ok(ck.params)
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = Checkpoint::encode(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
