//! Checkpoint file format.
//!
//! Layout: magic `DTCN`, little-endian u32 format version, little-endian u64
//! header length, UTF-8 JSON header (model spec, covariate schema, series
//! ids and vocabularies, scales, generator state, training metadata, and a
//! tensor directory with names/shapes/offsets), payload of little-endian
//! 32-bit floats, trailing little-endian u64 FNV-1a checksum of the payload
//! bytes.
//!
//! Scales live in the header as JSON numbers (shortest round-trip doubles)
//! rather than in the 32-bit payload so a save/load cycle reproduces
//! forecasts bit-for-bit.

use std::path::Path;

use deeptcn_core::model::{DeepTcn, ModelSpec};
use deeptcn_core::panel::CovariateSchema;
use deeptcn_core::rng::RngState;
use deeptcn_core::tensor::Tensor;
use deeptcn_core::train::{TrainMeta, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 4] = b"DTCN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, counted in f32 elements.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    schema: CovariateSchema,
    series_ids: Vec<String>,
    static_names: Vec<String>,
    static_vocabs: Vec<Vec<String>>,
    scales: Vec<f64>,
    rng: RngState,
    meta: TrainMeta,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Serialize a trained model to the checkpoint byte layout.
pub fn checkpoint_bytes(tm: &TrainedModel<f32>) -> AppResult<Vec<u8>> {
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    let mut directory = |name: &str, t: &Tensor<f32>, payload: &mut Vec<u8>| -> TensorEntry {
        let entry = TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        };
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
        entry
    };

    let params: Vec<TensorEntry> = tm
        .model
        .params
        .iter()
        .map(|(n, t)| directory(n, t, &mut payload))
        .collect();
    let buffers: Vec<TensorEntry> = tm
        .model
        .buffers
        .iter()
        .map(|(n, t)| directory(n, t, &mut payload))
        .collect();

    let header = Header {
        spec: tm.model.spec().clone(),
        schema: tm.model.schema().clone(),
        series_ids: tm.series_ids.clone(),
        static_names: tm.static_names.clone(),
        static_vocabs: tm.static_vocabs.clone(),
        scales: tm.scales.clone(),
        rng: tm.rng.clone(),
        meta: tm.meta.clone(),
        params,
        buffers,
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(4 + 4 + 8 + header_json.len() + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint(tm: &TrainedModel<f32>, path: &Path) -> AppResult<()> {
    let bytes = checkpoint_bytes(tm)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Rebuild a trained model from checkpoint bytes, verifying magic, version,
/// lengths and the payload checksum.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> AppResult<TrainedModel<f32>> {
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(AppError::Data(
            "not a checkpoint: bad magic bytes".to_string(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(AppError::Data(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .ok_or_else(|| AppError::Data("corrupt header length".to_string()))?;
    if bytes.len() < header_end + 8 {
        return Err(AppError::Data(format!(
            "truncated checkpoint: {} bytes, header alone needs {}",
            bytes.len(),
            header_end + 8
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])?;

    let payload_len: usize = header
        .params
        .iter()
        .chain(&header.buffers)
        .map(|e| e.len)
        .sum::<usize>()
        * 4;
    if bytes.len() != header_end + payload_len + 8 {
        return Err(AppError::Data(format!(
            "truncated checkpoint: payload holds {} bytes, directory implies {}",
            bytes.len() - header_end - 8,
            payload_len
        )));
    }
    let payload = &bytes[header_end..header_end + payload_len];
    let stored = u64::from_le_bytes(bytes[header_end + payload_len..].try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(AppError::Data(format!(
            "checkpoint integrity failure: checksum {computed:016x} != stored {stored:016x}"
        )));
    }

    let read_tensor = |e: &TensorEntry| -> AppResult<Tensor<f32>> {
        let lo = e.offset * 4;
        let hi = lo + e.len * 4;
        if hi > payload.len() {
            return Err(AppError::Data(format!(
                "tensor '{}' extends past the payload",
                e.name
            )));
        }
        let data: Vec<f32> = payload[lo..hi]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(e.shape.clone(), data)
            .map_err(|err| AppError::Data(format!("tensor '{}': {err}", e.name)))
    };

    // rebuild the architecture deterministically, then overwrite the weights
    let mut model = DeepTcn::<f32>::init(&header.spec, &header.schema)?;
    if header.params.len() != model.params.len() {
        return Err(AppError::Data(format!(
            "checkpoint holds {} tensors, model defines {}",
            header.params.len(),
            model.params.len()
        )));
    }
    let param_ids: Vec<_> = model.params.ids().collect();
    for (e, &id) in header.params.iter().zip(&param_ids) {
        check_entry(&e.name, model.params.name(id), &e.shape, model.params.get(id).shape())?;
        model.params.set(id, read_tensor(e)?);
    }
    if header.buffers.len() != model.buffers.len() {
        return Err(AppError::Data(format!(
            "checkpoint holds {} buffers, model defines {}",
            header.buffers.len(),
            model.buffers.len()
        )));
    }
    let buf_ids: Vec<_> = model.buffers.ids().collect();
    for (e, &id) in header.buffers.iter().zip(&buf_ids) {
        check_entry(&e.name, model.buffers.name(id), &e.shape, model.buffers.get(id).shape())?;
        model.buffers.set(id, read_tensor(e)?);
    }

    Ok(TrainedModel {
        model,
        series_ids: header.series_ids,
        static_names: header.static_names,
        static_vocabs: header.static_vocabs,
        scales: header.scales,
        rng: header.rng,
        meta: header.meta,
    })
}

fn check_entry(found: &str, expected: &str, shape: &[usize], model_shape: &[usize]) -> AppResult<()> {
    if found != expected {
        return Err(AppError::Data(format!(
            "tensor named '{found}' where the model expects '{expected}'"
        )));
    }
    if shape != model_shape {
        return Err(AppError::Data(format!(
            "tensor '{found}' has shape {shape:?}, model expects {model_shape:?}"
        )));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> AppResult<TrainedModel<f32>> {
    let bytes = std::fs::read(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}
