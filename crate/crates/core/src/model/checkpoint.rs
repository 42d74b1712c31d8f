//! Binary checkpoint: magic, format version, a JSON header with dimensions,
//! attention kind and tensor shapes, then every tensor as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::AttentionKind;
use crate::numerics::Mat64;

use super::{Model, ModelDims, ModelParams};

const MAGIC: &[u8; 8] = b"GRCATTN\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: ModelDims,
    attention: AttentionKind,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let tensors = model.params().tensors();
    let header = Header {
        dims: *model.dims(),
        attention: model.kind(),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorInfo {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in tensors {
        for x in m.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let take = |off: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(off..off + n)
            .ok_or_else(|| bad(format!("truncated at byte {off}")))
    };
    if take(0, 8)? != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("four bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hlen = u64::from_le_bytes(take(12, 8)?.try_into().expect("eight bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(20, hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    header.dims.validate()?;

    let monotonic = header.tensors.iter().any(|t| t.name.starts_with("mono."));
    let mut params = ModelParams::zeros(&header.dims, monotonic);
    let expected: Vec<(String, usize, usize)> = params
        .tensors()
        .iter()
        .map(|(n, m)| (n.clone(), m.rows(), m.cols()))
        .collect();
    let found: Vec<(String, usize, usize)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.rows, t.cols))
        .collect();
    if expected != found {
        return Err(bad("tensor table does not match the stated dimensions".into()));
    }

    let mut off = 20 + hlen;
    for (_, m) in params.tensors_mut() {
        let n = m.as_slice().len();
        let raw = take(off, 8 * n)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        *m = Mat64::from_vec(m.rows(), m.cols(), data).map_err(|e| bad(e.to_string()))?;
        off += 8 * n;
    }
    if off != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - off)));
    }
    Model::from_params(header.dims, header.attention, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_checkpoint(&bytes, path)
}
