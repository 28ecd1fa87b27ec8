//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"ELQM" | u32 version | u32 header_len | header JSON | payload
//! ```
//!
//! The header holds the model config and one entry per slot giving its kind
//! (`norm`, `dense` or `quantized`), shape, and byte range inside the payload.
//! Dense and norm slots store raw `f32`. Quantized slots store packed codes,
//! `f32` scales, `i32` zero-points and an optional packed mask, back to back.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{SlotId, SlotRef, TinyLM, Weight};
use crate::error::{Error, Result};
use crate::quant::pack::{pack_codes, pack_mask, unpack_codes, unpack_mask};
use crate::quant::{QuantSpec, QuantTensor, SparsitySpec};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"ELQM";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    slots: Vec<SlotEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Storage {
    Norm,
    Dense,
    Quantized { spec: QuantSpec, sparsity: Option<SparsitySpec>, has_mask: bool, frozen: bool },
}

#[derive(Debug, Serialize, Deserialize)]
struct SlotEntry {
    name: SlotId,
    rows: usize,
    cols: usize,
    offset: usize,
    len: usize,
    #[serde(flatten)]
    storage: Storage,
}

fn f32_bytes(xs: &[f32]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn read_f32s(bytes: &[u8], count: usize) -> Result<Vec<f32>> {
    if bytes.len() < count * 4 {
        return Err(Error::Format("truncated float block".into()));
    }
    Ok(bytes[..count * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_i32s(bytes: &[u8], count: usize) -> Result<Vec<i32>> {
    if bytes.len() < count * 4 {
        return Err(Error::Format("truncated integer block".into()));
    }
    Ok(bytes[..count * 4].chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Serializes `model` in the binary format described in the module docs.
pub fn write_model<W: Write>(model: &TinyLM, mut out: W) -> Result<()> {
    let mut payload = Vec::new();
    let mut slots = Vec::new();
    for id in model.slot_ids() {
        let start = payload.len();
        let (rows, cols, storage) = match model.slot(id).expect("listed slot exists") {
            SlotRef::Norm(v) => {
                payload.extend(f32_bytes(v));
                (1, v.len(), Storage::Norm)
            }
            SlotRef::Weight(Weight::Dense(m)) => {
                payload.extend(m.to_le_bytes());
                (m.rows, m.cols, Storage::Dense)
            }
            SlotRef::Weight(Weight::Quantized { qt, .. }) => {
                let spec = *qt.spec();
                payload.extend(pack_codes(qt.codes(), spec.bits, spec.scheme));
                payload.extend(f32_bytes(qt.scales()));
                payload.extend(qt.zero_points().iter().flat_map(|z| z.to_le_bytes()));
                if let Some(mask) = qt.mask() {
                    payload.extend(pack_mask(mask));
                }
                let (rows, cols) = qt.shape();
                let storage = Storage::Quantized {
                    spec,
                    sparsity: qt.sparsity().copied(),
                    has_mask: qt.mask().is_some(),
                    frozen: qt.is_frozen(),
                };
                (rows, cols, storage)
            }
        };
        slots.push(SlotEntry { name: id, rows, cols, offset: start, len: payload.len() - start, storage });
    }
    let header = serde_json::to_vec(&Header { config: model.config().clone(), slots })?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&payload)?;
    Ok(())
}

fn decode_slot(entry: &SlotEntry, bytes: &[u8]) -> Result<Option<Weight>> {
    let n = entry.rows * entry.cols;
    Ok(match &entry.storage {
        Storage::Norm => None,
        Storage::Dense => Some(Weight::Dense(Matrix::from_vec(entry.rows, entry.cols, read_f32s(bytes, n)?)?)),
        Storage::Quantized { spec, sparsity, has_mask, frozen } => {
            let code_len = (n * spec.bits as usize).div_ceil(8);
            let groups = spec.group_count(entry.rows, entry.cols);
            let zp_count = if spec.scheme == crate::quant::Scheme::Asymmetric { groups } else { 0 };
            let need = code_len + 4 * groups + 4 * zp_count + if *has_mask { n.div_ceil(8) } else { 0 };
            if bytes.len() != need {
                return Err(Error::Format(format!("slot `{}` has {} bytes, expected {need}", entry.name, bytes.len())));
            }
            let codes = unpack_codes(&bytes[..code_len], n, spec.bits, spec.scheme)?;
            let mut at = code_len;
            let scales = read_f32s(&bytes[at..], groups)?;
            at += 4 * groups;
            let zps = read_i32s(&bytes[at..], zp_count)?;
            at += 4 * zp_count;
            let mask = has_mask.then(|| unpack_mask(&bytes[at..], n));
            let qt =
                QuantTensor::from_parts(*spec, (entry.rows, entry.cols), codes, scales, zps, mask, *sparsity, *frozen)?;
            Some(Weight::quantized(qt))
        }
    })
}

/// Parses a model written by [`write_model`].
pub fn read_model<R: Read>(mut input: R) -> Result<TinyLM> {
    let mut fixed = [0u8; 12];
    input.read_exact(&mut fixed)?;
    if &fixed[..4] != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model file version {version}")));
    }
    let header_len = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;

    // Start from a correctly shaped model and overwrite every slot.
    let cfg = header.config;
    let mut model = TinyLM::init(cfg.clone(), 0)?;
    if header.slots.len() != model.slot_ids().len() {
        return Err(Error::Format("slot list does not match the config".into()));
    }
    for entry in &header.slots {
        let bytes = payload
            .get(entry.offset..entry.offset + entry.len)
            .ok_or_else(|| Error::Format(format!("slot `{}` runs past the payload", entry.name)))?;
        match decode_slot(entry, bytes)? {
            Some(w) => model.set_weight(entry.name, w)?,
            None => model.set_norm(entry.name, read_f32s(bytes, entry.cols)?)?,
        }
    }
    Ok(model)
}

pub fn save_model(model: &TinyLM, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TinyLM> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{ptq_model, PrecisionPlan, QuantSpec};

    fn round_trip(m: &TinyLM) -> TinyLM {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        read_model(buf.as_slice()).unwrap()
    }

    #[test]
    fn dense_round_trip() {
        let m = TinyLM::init(ModelConfig::new(40, 16, 2, 4, 2), 3).unwrap();
        assert_eq!(round_trip(&m).weights_hash(), m.weights_hash());
    }

    #[test]
    fn quantized_round_trip() {
        let m = TinyLM::init(ModelConfig { tie_embeddings: false, ..ModelConfig::new(40, 16, 2, 4, 2) }, 3).unwrap();
        let q = ptq_model(&m, &PrecisionPlan::uniform(&m, QuantSpec::symmetric_per_group(3, 8))).unwrap();
        let back = round_trip(&q);
        assert_eq!(back.weights_hash(), q.weights_hash());
        assert_eq!(back.logits(&[1, 2, 3]).unwrap(), q.logits(&[1, 2, 3]).unwrap());
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(read_model(&b"NOPE\x01\0\0\0\0\0\0\0"[..]), Err(Error::Format(_))));
    }
}
