//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "CSPK" | u32 version=1 | u32 crc32(payload) | payload
//! payload = u32 n | n bytes of model-config JSON
//!           u32 tensor count
//!           per tensor: NUL-terminated name | u8 kind | u32 len | len x f32
//! ```
//!
//! The configuration records every size, the variant, the filter length,
//! the lag set, the padding rule and the filter initialisation. Tensors
//! appear in the model's declared order and are checked against the shapes
//! the configuration implies.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::fsutil::write_atomic;
use crate::model::{Cspmnet, ModelConfig};
use crate::nn::{Parameters, TensorKind};
use crate::signal::container::Reader;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CSPK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn kind_code(kind: TensorKind) -> u8 {
    match kind {
        TensorKind::Trainable => 0,
        TensorKind::Frozen => 1,
        TensorKind::Buffer => 2,
    }
}

pub fn encode_checkpoint(model: &Cspmnet<f32>) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("config serialises");
    let mut payload = Vec::new();
    payload.extend_from_slice(&(config.len() as u32).to_le_bytes());
    payload.extend_from_slice(&config);
    let tensors = model.tensors();
    payload.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        payload.extend_from_slice(t.name.as_bytes());
        payload.push(0);
        payload.push(kind_code(t.kind));
        payload.extend_from_slice(&(t.data.len() as u32).to_le_bytes());
        for v in t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + payload.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Cspmnet<f32>, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let stored = r.u32("checksum")?;
    let payload = &bytes[12..];
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let config_len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| FormatError::Malformed(format!("config JSON: {e}")))?;
    let mut model = Cspmnet::<f32>::new(config, 0).map_err(|e| FormatError::Malformed(e.to_string()))?;
    let count = r.u32("tensor count")? as usize;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(FormatError::Malformed(format!(
            "config implies {} tensors, file has {count}",
            slots.len()
        )));
    }
    for slot in slots.iter_mut() {
        let name = r.cstr("tensor name")?;
        let kind = r.take(1, &name)?[0];
        let len = r.u32(&name)? as usize;
        if name != slot.name || kind != kind_code(slot.kind) || len != slot.data.len() {
            return Err(FormatError::Malformed(format!(
                "tensor '{name}' (kind {kind}, {len} values) does not match expected '{}' ({} values)",
                slot.name,
                slot.data.len()
            )));
        }
        let raw = r.take(4 * len, &name)?;
        for (d, c) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap());
        }
    }
    drop(slots);
    if r.remaining() != 0 {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Cspmnet<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Cspmnet<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a checkpoint and rejects it unless its configuration equals
/// `expected`.
pub fn load_checkpoint_matching(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Cspmnet<f32>> {
    let path = path.as_ref();
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::Config(format!(
            "{} was written for {:?}, expected {:?}",
            path.display(),
            model.config(),
            expected
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_is_bit_exact_for_every_variant() {
        for v in Variant::ALL {
            let mut m = Cspmnet::<f32>::new(ModelConfig::tiny(v), 9).unwrap();
            m.bn.running_mean[0] = 0.25;
            let bytes = encode_checkpoint(&m);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let m = Cspmnet::<f32>::new(ModelConfig::tiny(Variant::Full), 1).unwrap();
        let bytes = encode_checkpoint(&m);
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(FormatError::Checksum { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(FormatError::BadMagic { .. })));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(FormatError::Checksum { .. })
        ));
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Cspmnet::<f32>::new(ModelConfig::tiny(Variant::Full), 1).unwrap();
        save_checkpoint(&m, &path).unwrap();
        assert!(load_checkpoint_matching(&path, m.config()).is_ok());
        let other = ModelConfig {
            kernel_len: 3,
            ..m.config().clone()
        };
        assert!(matches!(load_checkpoint_matching(&path, &other), Err(Error::Config(_))));
    }

    #[test]
    fn records_filter_length_padding_and_init() {
        let m = Cspmnet::<f32>::new(ModelConfig::default(), 1).unwrap();
        let bytes = encode_checkpoint(&m);
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let json: serde_json::Value = serde_json::from_slice(&bytes[16..16 + n]).unwrap();
        assert_eq!(json["kernel_len"], 33);
        assert_eq!(json["padding"], "zero");
        assert_eq!(json["filter_init"], "uniform_fan_in");
        assert_eq!(json["lags"], serde_json::json!([1, 2, 4, 8]));
    }
}
