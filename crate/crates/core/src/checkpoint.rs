//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, u32 version, u32 header length, header JSON, then the
//! tensors as concatenated f32 little-endian blobs in header order. The header
//! records the producing config and its hash; loads that expect a specific
//! hash fail fast instead of silently reshaping weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensors;

pub const CKPT_MAGIC: &[u8; 8] = b"VOXCKPT1";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// What the parameters are for: "vae", "classifier", "discriminator", ...
    pub kind: String,
    pub config_json: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    tensors: &Tensors<f32>,
) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CKPT_MAGIC).map_err(io)?;
    w.write_all(&CKPT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&header_json).map_err(io)?;
    for (_, t) in tensors.iter() {
        let flat = t.as_slice().expect("standard layout");
        let mut buf = Vec::with_capacity(flat.len() * 4);
        for v in flat {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointMeta, Tensors<f32>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;

    let mut tensors = Tensors::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf).map_err(|e| {
            Error::Checkpoint(format!(
                "{}: truncated payload for tensor {}: {e}",
                path.display(),
                entry.name
            ))
        })?;
        let values: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&entry.shape), values)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", entry.name)))?;
        tensors.insert(entry.name.clone(), arr);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    Ok((header.meta, tensors))
}

/// Load and verify kind + config hash.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    kind: &str,
    config_hash: &str,
) -> Result<(CheckpointMeta, Tensors<f32>)> {
    let path = path.as_ref();
    let (meta, tensors) = load_checkpoint(path)?;
    if meta.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{}: kind {:?}, expected {kind:?}",
            path.display(),
            meta.kind
        )));
    }
    if meta.config_hash != config_hash {
        return Err(Error::Checkpoint(format!(
            "{}: config hash mismatch (checkpoint {}, expected {})",
            path.display(),
            &meta.config_hash[..12.min(meta.config_hash.len())],
            &config_hash[..12.min(config_hash.len())]
        )));
    }
    Ok((meta, tensors))
}
