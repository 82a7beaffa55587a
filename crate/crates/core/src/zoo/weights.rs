//! Binary weights container.
//!
//! Layout: `b"DVAD"`, `u32` version, `u32` manifest length, JSON manifest,
//! little-endian `f32` payload, `u32` CRC-32 of the payload. All integers
//! are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"DVAD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub tensors: Vec<TensorEntry>,
}

/// Decoded file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub manifest: Manifest,
    pub values: Vec<Vec<f32>>,
}

/// Parameters then running statistics, as `(name, shape, values)`.
fn named_tensors<T: Scalar>(model: &Model<T>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let f32s = |v: &[T]| v.iter().map(|x| x.f64() as f32).collect::<Vec<f32>>();
    let mut out: Vec<_> = model
        .params()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.tensor.shape().to_vec(), f32s(p.tensor.data())))
        .collect();
    for (name, s) in model.running_stats() {
        out.push((format!("{name}.running_mean"), vec![s.mean.len()], f32s(&s.mean)));
        out.push((format!("{name}.running_var"), vec![s.var.len()], f32s(&s.var)));
    }
    out
}

pub fn encode<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let tensors = named_tensors(model);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, shape, values) in tensors {
        entries.push(TensorEntry { name, shape, offset: payload.len() });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest { model: model.name().to_string(), tensors: entries })
        .expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::WeightsFormat(format!("truncated at byte {at}")))
}

pub fn decode(bytes: &[u8]) -> Result<WeightsFile> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::WeightsFormat("bad magic, not a DVAD file".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::WeightsFormat(format!("unsupported version {version}")));
    }
    let mlen = read_u32(bytes, 8)? as usize;
    let mend = 12 + mlen;
    if bytes.len() < mend + 4 {
        return Err(Error::WeightsFormat("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..mend])
        .map_err(|e| Error::WeightsFormat(format!("manifest: {e}")))?;
    let payload = &bytes[mend..bytes.len() - 4];
    let stored = read_u32(bytes, bytes.len() - 4)?;
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::WeightsFormat(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let mut values = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let len = t.shape.iter().product::<usize>() * 4;
        let raw = payload
            .get(t.offset..t.offset + len)
            .ok_or_else(|| Error::WeightsFormat(format!("tensor `{}` runs past the payload", t.name)))?;
        values.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect());
    }
    Ok(WeightsFile { manifest, values })
}

/// Copies decoded values into `model`, which must have the same tensors in
/// the same order.
pub fn apply<T: Scalar>(model: &mut Model<T>, file: &WeightsFile) -> Result<()> {
    let expected = named_tensors(model);
    let entries = &file.manifest.tensors;
    for (i, (name, shape, _)) in expected.iter().enumerate() {
        let Some(e) = entries.get(i) else {
            return Err(Error::WeightsMismatch { name: name.clone(), detail: "missing from file".into() });
        };
        if &e.name != name {
            return Err(Error::WeightsMismatch { name: name.clone(), detail: format!("file has `{}` at this position", e.name) });
        }
        if &e.shape != shape {
            return Err(Error::WeightsMismatch { name: name.clone(), detail: format!("shape {:?} in file, model expects {shape:?}", e.shape) });
        }
    }
    if let Some(extra) = entries.get(expected.len()) {
        return Err(Error::WeightsMismatch { name: extra.name.clone(), detail: "not present in model".into() });
    }
    let lit = |v: &[f32]| v.iter().map(|&x| T::lit(x as f64)).collect::<Vec<T>>();
    let np = model.params().len();
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        p.tensor.data_mut().copy_from_slice(&lit(&file.values[i]));
    }
    for (j, (_, s)) in model.running_stats_mut().iter_mut().enumerate() {
        s.mean = lit(&file.values[np + 2 * j]);
        s.var = lit(&file.values[np + 2 * j + 1]);
    }
    Ok(())
}

pub fn save<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_into<T: Scalar>(model: &mut Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = decode(&std::fs::read(path)?)?;
    apply(model, &file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::defaults;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = defaults::student_config(4).unwrap();
        let mut a = Model::<f32>::build(&cfg, 1).unwrap();
        a.running_stats_mut()[0].1.mean[0] = 0.123;
        let bytes = encode(&a);
        let mut b = Model::<f32>::build(&cfg, 2).unwrap();
        apply(&mut b, &decode(&bytes).unwrap()).unwrap();
        assert_eq!(encode(&b), bytes);
        for ((_, p), (_, q)) in a.params().iter().zip(b.params().iter()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(p.tensor.data()), bits(q.tensor.data()));
        }
        assert_eq!(a.running_stats(), b.running_stats());
    }

    #[test]
    fn corrupted_payload_rejected() {
        let cfg = defaults::student_config(4).unwrap();
        let mut bytes = encode(&Model::<f32>::build(&cfg, 1).unwrap());
        let mid = bytes.len() - 100;
        bytes[mid] ^= 0x40;
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
    }

    #[test]
    fn mismatch_names_tensor() {
        let s4 = Model::<f32>::build(&defaults::student_config(4).unwrap(), 1).unwrap();
        let mut s3 = Model::<f32>::build(&defaults::student_config(3).unwrap(), 1).unwrap();
        match apply(&mut s3, &decode(&encode(&s4)).unwrap()) {
            Err(Error::WeightsMismatch { name, .. }) => assert!(!name.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(decode(b"NOPE").is_err());
        let mut bytes = encode(&Model::<f32>::build(&defaults::student_config(4).unwrap(), 1).unwrap());
        bytes[4] = 9;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version"));
    }
}
