//! Model snapshot files (`.cwmp`).
//!
//! Layout: magic "CWMM", u32 version, u32 metadata length, metadata JSON
//! (architecture config plus training provenance), u32 tensor count, then per
//! tensor: u32 name length, name bytes, u32 rank, u32 dims, f64 little-endian
//! data. Parameters are stored at full compute precision, so save/load/save
//! is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{ParamSet, Tensor};
use crate::error::{CwmError, Result};
use crate::model::{ModelConfig, TrainMeta, TrainedModel};

pub const MODEL_MAGIC: [u8; 4] = *b"CWMM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FileMeta {
    config: ModelConfig,
    meta: TrainMeta,
}

/// Serialize a model snapshot to bytes.
pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    model.validate_shapes()?;
    let meta = FileMeta {
        config: model.config.clone(),
        meta: model.meta.clone(),
    };
    let meta_json = serde_json::to_string(&meta)
        .map_err(|e| CwmError::Schema(format!("model metadata serialization: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_json.as_bytes());
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in model.params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Parse a model snapshot from bytes.
pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(CwmError::CorruptData(format!(
                "model file truncated at byte {}",
                *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };

    if take(&mut pos, 4)? != MODEL_MAGIC {
        return Err(CwmError::CorruptData("bad model magic".into()));
    }
    let version = take_u32(&mut pos)?;
    if version != MODEL_VERSION {
        return Err(CwmError::UnsupportedVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let meta_len = take_u32(&mut pos)? as usize;
    let meta_bytes = take(&mut pos, meta_len)?;
    let meta: FileMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| CwmError::CorruptData(format!("model metadata parse: {e}")))?;

    let n_tensors = take_u32(&mut pos)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_tensors {
        let name_len = take_u32(&mut pos)? as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| CwmError::CorruptData("non-utf8 parameter name".into()))?;
        let rank = take_u32(&mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut pos)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        params.push(name, Tensor::new(shape, data)?);
    }
    if pos != bytes.len() {
        return Err(CwmError::CorruptData(format!(
            "{} trailing bytes in model file",
            bytes.len() - pos
        )));
    }

    let model = TrainedModel {
        config: meta.config,
        params,
        meta: meta.meta,
    };
    // Parameters must line up with the architecture the metadata declares.
    model.validate_shapes()?;
    Ok(model)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelMode};

    fn tiny_model(seed: u64) -> TrainedModel {
        TrainedModel::init(
            ModelConfig {
                mode: ModelMode::Cwm,
                k_slots: 2,
                obs_channels: 3,
                resolution: 15,
                conv_channels: 4,
                hidden_dim: 8,
                gru_hidden: 5,
                ..ModelConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_preserves_every_parameter_bit() {
        let model = tiny_model(3);
        let bytes = encode_model(&model).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = tiny_model(9);
        let a = encode_model(&model).unwrap();
        let back = decode_model(&a).unwrap();
        let b = encode_model(&back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_tensor_section_detected() {
        let model = tiny_model(1);
        let bytes = encode_model(&model).unwrap();
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 3]),
            Err(CwmError::CorruptData(_))
        ));
    }

    #[test]
    fn mismatched_architecture_is_a_schema_error() {
        // Claim a different slot count in the metadata than the tensors have.
        let model = tiny_model(1);
        let bytes = encode_model(&model).unwrap();
        let json_needle = b"\"k_slots\":2";
        let idx = bytes
            .windows(json_needle.len())
            .position(|w| w == json_needle)
            .expect("metadata contains k_slots");
        let mut tampered = bytes.clone();
        tampered[idx + json_needle.len() - 1] = b'3';
        assert!(matches!(
            decode_model(&tampered),
            Err(CwmError::Schema(_))
        ));
    }

    #[test]
    fn version_bump_is_refused() {
        let model = tiny_model(1);
        let mut bytes = encode_model(&model).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_model(&bytes),
            Err(CwmError::UnsupportedVersion { found: 2, .. })
        ));
    }
}
