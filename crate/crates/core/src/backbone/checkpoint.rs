//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes  "XDFSLCKP"
//! version    u32 LE   (1)
//! index_len  u64 LE
//! index      index_len bytes of UTF-8 JSON (see `Index`)
//! payload    tensors, little-endian IEEE-754, at the offsets listed in the index
//! ```
//! Offsets are relative to the start of the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, FeatureExtractor, HeadPurpose, InputShape, LinearHead, TrainState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XDFSLCKP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    architecture_id: String,
    architecture: Architecture,
    input_shape: InputShape,
    feature_dim: usize,
    step: u64,
    epoch: u64,
    seed: u64,
    heads: Vec<HeadPurpose>,
    tensors: Vec<Entry>,
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let params = state.model.parameters();
    let mut offset = 0u64;
    let tensors = params
        .iter()
        .map(|p| {
            let e = Entry {
                name: p.name.clone(),
                dtype: "f32".into(),
                shape: p.shape.clone(),
                offset,
            };
            offset += 4 * p.data.len() as u64;
            e
        })
        .collect();
    let ex = state.extractor();
    let index = Index {
        architecture_id: ex.architecture_id().to_string(),
        architecture: ex.architecture().clone(),
        input_shape: ex.input_shape(),
        feature_dim: ex.feature_dim(),
        step: state.step,
        epoch: state.epoch,
        seed: state.seed,
        heads: state.model.heads.iter().map(|h| h.purpose).collect(),
        tensors,
    };
    let json = serde_json::to_vec(&index)?;
    let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Restores parameters and counters; momentum buffers start at zero.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let index: Index = serde_json::from_slice(bytes.get(20..20 + len).ok_or_else(|| bad("truncated index"))?)?;
    let payload = &bytes[20 + len..];
    let mut tensors = Vec::with_capacity(index.tensors.len());
    for e in &index.tensors {
        if e.dtype != "f32" {
            return Err(bad(&format!("unsupported dtype {}", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let raw = payload
            .get(start..start + 4 * n)
            .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data,
        });
    }
    let n_ex = tensors.len() - 2 * index.heads.len().min(tensors.len() / 2);
    let head_tensors = tensors.split_off(n_ex);
    let extractor = FeatureExtractor::from_parts(index.architecture, index.input_shape, tensors)?;
    if extractor.feature_dim() != index.feature_dim {
        return Err(bad("feature_dim does not match architecture"));
    }
    let mut heads = Vec::new();
    for (purpose, pair) in index.heads.iter().zip(head_tensors.chunks(2)) {
        let [weight, bias] = pair else {
            return Err(bad("incomplete head"));
        };
        heads.push(LinearHead {
            purpose: *purpose,
            weight: weight.clone(),
            bias: bias.clone(),
        });
    }
    let mut state = TrainState::new(extractor, index.seed);
    state.set_heads(heads);
    state.step = index.step;
    state.epoch = index.epoch;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything_but_momentum() {
        let mut s = TrainState::init(
            Architecture::ConvSmall {
                channels: vec![4, 8],
            },
            InputShape {
                height: 16,
                width: 16,
                channels: 3,
            },
            9,
        )
        .unwrap();
        s.set_heads(vec![LinearHead::new(HeadPurpose::Rotation4Way, 8, 4, 1)]);
        s.step = 12;
        s.epoch = 3;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&s, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model, s.model);
        assert_eq!((back.step, back.epoch, back.seed), (12, 3, 9));

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
