//! Binary checkpoints: magic, header length, JSON header, then little-endian
//! `f32` tensor blocks (parameters, then both optimizer moments).

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::ArrayViewD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::domain::SeedTree;
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::model::Model;
use crate::nn::Params;
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Real;
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 8] = b"MMPTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorGroup {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: TensorGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: RunConfig,
    pub seeds: SeedTree,
    pub step: u64,
    pub adam: AdamWConfig,
    pub adam_t: u64,
    pub point_dim: usize,
    pub image_dim: usize,
    pub dataset_hash: Option<String>,
    pub history: Vec<LossReport>,
    pub tensors: Vec<TensorEntry>,
    pub payload_len: u64,
    pub payload_sha256: String,
}

fn encode_group<T: Real>(
    list: Vec<(String, ArrayViewD<'_, T>)>,
    group: TensorGroup,
    entries: &mut Vec<TensorEntry>,
    payload: &mut Vec<u8>,
) {
    for (name, a) in list {
        entries.push(TensorEntry {
            name,
            shape: a.shape().to_vec(),
            group,
        });
        for v in a.iter() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
}

/// Serializes `state` to bytes.
pub fn to_bytes<T: Real>(state: &TrainState<T>) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    encode_group(state.model.named(), TensorGroup::Param, &mut entries, &mut payload);
    encode_group(state.opt.m.named(), TensorGroup::AdamM, &mut entries, &mut payload);
    encode_group(state.opt.v.named(), TensorGroup::AdamV, &mut entries, &mut payload);
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: state.config.clone(),
        seeds: state.seeds.clone(),
        step: state.step,
        adam: state.opt.config,
        adam_t: state.opt.t,
        point_dim: state.model.point.global_dim(),
        image_dim: state.model.image.feature_dim(),
        dataset_hash: state.dataset_hash.clone(),
        history: state.history.clone(),
        tensors: entries,
        payload_len: payload.len() as u64,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Writes through a temporary file so an interrupted save never leaves a partial checkpoint.
pub fn save_checkpoint<T: Real>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses only the header.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::Checkpoint(format!(
            "truncated header: need {len} bytes, file has {}",
            body.len()
        )));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} unsupported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let payload = &body[len..];
    if payload.len() as u64 != header.payload_len {
        return Err(Error::Checkpoint(format!(
            "truncated payload: header declares {} bytes, found {}",
            header.payload_len,
            payload.len()
        )));
    }
    Ok((header, payload))
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<TrainState<T>> {
    let (header, payload) = read_header(bytes)?;
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::Checkpoint("payload checksum mismatch".into()));
    }
    let cfg = &header.config;
    let mut model = Model::<T>::new(&cfg.encoder, &cfg.proj, cfg.toggles.routing(), &header.seeds)?;
    if model.point.global_dim() != header.point_dim || model.image.feature_dim() != header.image_dim {
        return Err(Error::Checkpoint("encoder dims disagree with header".into()));
    }
    let mut opt = AdamW::new(header.adam, &model);
    opt.t = header.adam_t;
    let mut offset = 0usize;
    let mut groups = [
        (TensorGroup::Param, model.named_mut()),
        (TensorGroup::AdamM, opt.m.named_mut()),
        (TensorGroup::AdamV, opt.v.named_mut()),
    ];
    let mut entries = header.tensors.iter();
    for (group, list) in groups.iter_mut() {
        for (name, dst) in list.iter_mut() {
            let e = entries
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if e.group != *group || e.name != *name || e.shape != dst.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model tensor {name} {:?}",
                    e.name,
                    e.shape,
                    dst.shape()
                )));
            }
            let n = dst.len() * 4;
            let block = payload
                .get(offset..offset + n)
                .ok_or_else(|| Error::Checkpoint(format!("payload ends inside {name}")))?;
            for (v, c) in dst.iter_mut().zip(block.chunks_exact(4)) {
                *v = T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
            }
            offset += n;
        }
    }
    drop(groups);
    if entries.next().is_some() || offset != payload.len() {
        return Err(Error::Checkpoint("checkpoint holds tensors the model does not".into()));
    }
    Ok(TrainState {
        config: header.config,
        model,
        opt,
        step: header.step,
        history: header.history,
        seeds: header.seeds,
        dataset_hash: header.dataset_hash,
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<TrainState<T>> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderConfig;

    fn tiny() -> RunConfig {
        RunConfig {
            encoder: EncoderConfig {
                k_nn: 4,
                edge_widths: vec![8, 8],
                image_widths: vec![4, 8],
                resolution: 16,
                image_channels: 1,
            },
            proj: crate::heads::ProjectionConfig {
                d_intra: 8,
                d_cross: vec![12, 12, 16, 16],
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn fresh_state_roundtrips() {
        let state = TrainState::<f32>::new(&tiny(), None).unwrap();
        let back = from_bytes::<f32>(&to_bytes(&state).unwrap()).unwrap();
        assert_eq!(back.model, state.model);
        assert_eq!(back.opt, state.opt);
        assert_eq!(back.config, state.config);
    }

    #[test]
    fn corrupted_magic_and_truncation_fail() {
        let state = TrainState::<f32>::new(&tiny(), None).unwrap();
        let mut bytes = to_bytes(&state).unwrap();
        let err = from_bytes::<f32>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        bytes[0] = b'X';
        let err = from_bytes::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn version_mismatch_fails() {
        let state = TrainState::<f32>::new(&tiny(), None).unwrap();
        let bytes = to_bytes(&state).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let text = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
        let patched = text.replacen("\"version\":1", "\"version\":9", 1);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[16 + len..]);
        let err = from_bytes::<f32>(&out).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }
}
