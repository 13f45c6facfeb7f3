//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic "ISE3" | version u32 | meta_len u64 | meta JSON |
//!   param_count u64 | per parameter: name_len u64, name bytes,
//!   rank u64, dims u64…, values f64…
//!
//! The JSON header carries the model configuration and training metadata;
//! save → load → save is byte-identical.

use super::params::build_layout;
use super::{ModelConfig, ModelParams, NetError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const CKPT_MAGIC: &[u8; 4] = b"ISE3";
const CKPT_VERSION: u32 = 1;

/// Header metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Human-readable method label ("single", "iterative", …).
    pub method: String,
    pub train_seed: u64,
}

pub fn save_checkpoint<W: Write>(
    out: &mut W,
    params: &ModelParams,
    meta: &CheckpointMeta,
) -> Result<(), NetError> {
    if meta.config != params.config {
        return Err(NetError::Checkpoint(
            "metadata config differs from parameter config".into(),
        ));
    }
    out.write_all(CKPT_MAGIC)?;
    out.write_all(&CKPT_VERSION.to_le_bytes())?;
    let meta_json = serde_json::to_vec(meta)
        .map_err(|e| NetError::Checkpoint(format!("meta encode: {e}")))?;
    out.write_all(&(meta_json.len() as u64).to_le_bytes())?;
    out.write_all(&meta_json)?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.rank() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NetError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn load_checkpoint<R: Read>(input: &mut R) -> Result<(ModelParams, CheckpointMeta), NetError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(NetError::Checkpoint(format!(
            "bad magic {magic:?}, expected {CKPT_MAGIC:?}"
        )));
    }
    let mut vbuf = [0u8; 4];
    input.read_exact(&mut vbuf)?;
    let version = u32::from_le_bytes(vbuf);
    if version != CKPT_VERSION {
        return Err(NetError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let meta_len = read_u64(input)? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    input.read_exact(&mut meta_buf)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_buf)
        .map_err(|e| NetError::Checkpoint(format!("meta decode: {e}")))?;

    let count = read_u64(input)? as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(input)? as usize;
        let mut name_buf = vec![0u8; name_len];
        input.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| NetError::Checkpoint(format!("name decode: {e}")))?;
        let rank = read_u64(input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(input)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        names.push(name);
        tensors.push(Tensor::new(shape, data));
    }

    // validate against the layout the config implies
    let (_, want_names, want_tensors) = build_layout(&meta.config, 0);
    if want_names.len() != names.len() {
        return Err(NetError::Checkpoint(format!(
            "parameter count {} does not match config ({})",
            names.len(),
            want_names.len()
        )));
    }
    for i in 0..names.len() {
        if names[i] != want_names[i] {
            return Err(NetError::Checkpoint(format!(
                "parameter {i} named {:?}, config expects {:?}",
                names[i], want_names[i]
            )));
        }
        if tensors[i].shape() != want_tensors[i].shape() {
            return Err(NetError::Checkpoint(format!(
                "parameter {:?} has shape {:?}, config expects {:?}",
                names[i],
                tensors[i].shape(),
                want_tensors[i].shape()
            )));
        }
    }
    Ok((
        ModelParams::from_parts(meta.config.clone(), names, tensors),
        meta,
    ))
}
