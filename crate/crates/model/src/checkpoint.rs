//! Single-file checkpoint:
//!
//! ```text
//! magic "RTRKCKPT" | u32 LE version | u64 LE header length | JSON header | f64 LE tensor data
//! ```
//!
//! The header carries the vocabulary, the run configuration, whether the
//! adapters were merged, and the name, shape and trainable flag of every
//! tensor in data order.

use std::path::Path;

use reasontrack_core::{io::write_file, RunConfig};
use reasontrack_nn::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::TrackModel;
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"RTRKCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    vocab: Vec<String>,
    config: RunConfig,
    merged: bool,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &TrackModel) -> Vec<u8> {
    let tensors = model
        .store
        .iter()
        .map(|(_, p)| TensorEntry {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            trainable: p.trainable,
        })
        .collect();
    let header = Header {
        version: VERSION,
        vocab: model.vocab.words().to_vec(),
        config: model.config.clone(),
        merged: !model.brain.has_adapters(),
        tensors,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + 8 * model.store.num_scalars(&model.store.ids().collect::<Vec<_>>()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in model.store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<TrackModel> {
    let bad = |reason: String| ModelError::Checkpoint { path: path.to_path_buf(), reason };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end]).map_err(|e| bad(format!("header: {e}")))?;

    let mut model = TrackModel::new(header.config, Vocabulary::from_words(header.vocab))
        .map_err(|e| bad(format!("rebuilding model: {e}")))?;
    if header.merged {
        model.brain.forget_adapters();
    }
    if header.tensors.len() != model.store.len() {
        return Err(bad(format!("{} tensors stored, model has {}", header.tensors.len(), model.store.len())));
    }
    let mut offset = header_end;
    for t in &header.tensors {
        let id = model.store.find(&t.name).ok_or_else(|| bad(format!("unknown tensor {}", t.name)))?;
        if model.store.get(id).shape() != (t.rows, t.cols) {
            return Err(bad(format!(
                "tensor {} is {}x{}, model expects {:?}",
                t.name,
                t.rows,
                t.cols,
                model.store.get(id).shape()
            )));
        }
        let n = t.rows * t.cols;
        let end = offset + 8 * n;
        if end > bytes.len() {
            return Err(bad(format!("data truncated in tensor {}", t.name)));
        }
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *model.store.get_mut(id) = Mat::from_vec(t.rows, t.cols, data);
        model.store.set_trainable(id, t.trainable);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(model)
}

/// Writes atomically (temporary file, then rename).
pub fn save(model: &TrackModel, path: &Path) -> Result<()> {
    Ok(write_file(path, &to_bytes(model))?)
}

pub fn load(path: &Path) -> Result<TrackModel> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
    from_bytes(&bytes, path)
}
