//! Checkpoint files.
//!
//! Byte layout (all header lines end in `\n`):
//!
//! ```text
//! diffbeam-checkpoint <format version>
//! <metadata as one line of JSON>
//! params <count> sha256 <hex digest of the payload>
//! <count little-endian f64 values>
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ScheduleConfig;
use crate::env::ScenarioConfig;
use crate::error::{Error, Result};
use crate::nn::{ArchDescriptor, Network, OptimizerKind};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "diffbeam-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub format_version: u32,
    /// Architecture name such as `DM-GNN`.
    pub label: String,
    pub arch: ArchDescriptor,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerKind,
    pub scenario: ScenarioConfig,
}

fn digest(payload: &[u8]) -> String {
    Sha256::digest(payload).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(net: &Network, metadata: &CheckpointMetadata, path: &Path) -> Result<()> {
    if &metadata.arch != net.arch() {
        return Err(Error::CheckpointShape { expected: net.arch().summary(), found: metadata.arch.summary() });
    }
    let mut meta = metadata.clone();
    meta.format_version = FORMAT_VERSION;
    let json = serde_json::to_string(&meta).expect("metadata serializes");
    let payload: Vec<u8> = net.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut out = Vec::with_capacity(payload.len() + json.len() + 128);
    writeln!(out, "{MAGIC} {FORMAT_VERSION}").expect("write to vec");
    writeln!(out, "{json}").expect("write to vec");
    writeln!(out, "params {} sha256 {}", net.param_count(), digest(&payload)).expect("write to vec");
    out.extend_from_slice(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn split_line(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let end =
        bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::CorruptCheckpoint("header ends early".into()))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::CorruptCheckpoint("header is not text".into()))?;
    Ok((line, &bytes[end + 1..]))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMetadata)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: &str| Error::CorruptCheckpoint(what.to_string());

    let (first, rest) = split_line(&bytes)?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| corrupt("missing magic"))?
        .parse::<u32>()
        .map_err(|_| corrupt("unreadable format version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: FORMAT_VERSION });
    }

    let (json, rest) = split_line(rest)?;
    let meta: CheckpointMetadata =
        serde_json::from_str(json).map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    if meta.format_version != version {
        return Err(corrupt("metadata and header disagree on the format version"));
    }

    let (params_line, payload) = split_line(rest)?;
    let fields: Vec<&str> = params_line.split_whitespace().collect();
    let (count, expected_digest) = match fields.as_slice() {
        ["params", count, "sha256", d] => {
            (count.parse::<usize>().map_err(|_| corrupt("unreadable parameter count"))?, *d)
        }
        _ => return Err(corrupt("malformed parameter line")),
    };
    if payload.len() != count * 8 {
        return Err(Error::CorruptCheckpoint(format!("payload has {} bytes, expected {}", payload.len(), count * 8)));
    }
    if digest(payload) != expected_digest {
        return Err(corrupt("payload digest mismatch"));
    }
    let params: Vec<f64> =
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let net = Network::from_params(meta.arch.clone(), params).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok((net, meta))
}

/// Loads a checkpoint and checks that it holds `expected`.
pub fn load_checkpoint_as(path: &Path, expected: &ArchDescriptor) -> Result<(Network, CheckpointMetadata)> {
    let (net, meta) = load_checkpoint(path)?;
    if &meta.arch != expected {
        return Err(Error::CheckpointShape { expected: expected.summary(), found: meta.arch.summary() });
    }
    Ok((net, meta))
}
