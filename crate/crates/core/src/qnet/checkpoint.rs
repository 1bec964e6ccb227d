//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "SRLVQNET"
//! version    u16 LE
//! header_len u32 LE
//! header     JSON, header_len bytes
//! params     f32 LE, layer order (weights row-major, then bias)
//! crc32      u32 LE over the params blob
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Architecture, QNetwork};
use crate::features::BackboneDescriptor;

pub const MAGIC: &[u8; 8] = b"SRLVQNET";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("format mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("bad checkpoint header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub category: String,
    pub variant: String,
    pub epoch: usize,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub backbone: BackboneDescriptor,
    pub metadata: TrainingMetadata,
    pub param_count: usize,
}

pub fn write_checkpoint<W: Write>(
    net: &QNetwork<f32>,
    backbone: &BackboneDescriptor,
    metadata: &TrainingMetadata,
    mut out: W,
) -> io::Result<()> {
    let header = CheckpointHeader {
        architecture: net.architecture().clone(),
        backbone: backbone.clone(),
        metadata: metadata.clone(),
        param_count: net.param_count(),
    };
    let json = serde_json::to_vec(&header).map_err(io::Error::other)?;
    let mut blob = Vec::with_capacity(net.param_count() * 4);
    for slice in net.params() {
        for v in slice {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&blob)?;
    out.write_all(&crc32fast::hash(&blob).to_le_bytes())?;
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
    if buf.len() < n {
        return Err(CheckpointError::ChecksumMismatch(format!("file truncated in {what}")));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(QNetwork<f32>, CheckpointHeader), CheckpointError> {
    let mut buf = bytes;
    let magic = take(&mut buf, MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::FormatVersionMismatch("not a Q-network checkpoint".into()));
    }
    let version = u16::from_le_bytes(take(&mut buf, 2, "version")?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::FormatVersionMismatch(format!(
            "file version {version}, supported {FORMAT_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(take(&mut buf, 4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(take(&mut buf, header_len, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut net = QNetwork::<f32>::zeros(header.architecture.clone()).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if net.param_count() != header.param_count {
        return Err(CheckpointError::Header(format!(
            "architecture implies {} parameters, header says {}",
            net.param_count(),
            header.param_count
        )));
    }
    let blob = take(&mut buf, header.param_count * 4, "parameters")?;
    let crc = take(&mut buf, 4, "checksum")?;
    if !buf.is_empty() {
        return Err(CheckpointError::ChecksumMismatch(format!("{} trailing bytes", buf.len())));
    }
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(blob);
    if stored != actual {
        return Err(CheckpointError::ChecksumMismatch(format!(
            "stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for slice in net.params_mut() {
        for v in slice.iter_mut() {
            *v = values.next().expect("blob sized from header");
        }
    }
    Ok((net, header))
}

pub fn save(
    net: &QNetwork<f32>,
    backbone: &BackboneDescriptor,
    metadata: &TrainingMetadata,
    path: &Path,
) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    write_checkpoint(net, backbone, metadata, &mut bytes).map_err(io_err)?;
    fs::write(path, bytes).map_err(io_err)
}

pub fn load(path: &Path) -> Result<(QNetwork<f32>, CheckpointHeader), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    read_checkpoint(&bytes)
}

/// Loads a checkpoint and rejects it unless it matches the configured
/// architecture and backbone.
pub fn load_expecting(
    path: &Path,
    arch: &Architecture,
    backbone: &BackboneDescriptor,
) -> Result<(QNetwork<f32>, CheckpointHeader), CheckpointError> {
    let (net, header) = load(path)?;
    if &header.architecture != arch {
        return Err(CheckpointError::FormatVersionMismatch(format!(
            "{}: architecture differs from the configured agent",
            path.display()
        )));
    }
    if &header.backbone != backbone {
        return Err(CheckpointError::FormatVersionMismatch(format!(
            "{}: trained with backbone {} ({}), configured {} ({})",
            path.display(),
            header.backbone.name,
            header.backbone.dim,
            backbone.name,
            backbone.dim
        )));
    }
    Ok((net, header))
}
