//! Versioned binary checkpoint.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "PRECLAB\0"
//! version    u32
//! dtype      u8       4 = f32, 8 = f64
//! config     u32 length + JSON
//! meta       u32 length + JSON
//! n_arrays   u32
//! per array: u16 name length, name, u8 ndim, u32 dims..., raw elements
//! checksum   32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::scalar::DType;
use super::{Model, ModelConfig, Scalar, TinyLmError, TrainingMeta};

pub const MAGIC: &[u8; 8] = b"PRECLAB\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.params.len() * std::mem::size_of::<T>() + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    for json in [
        serde_json::to_vec(&model.config).expect("config serializes"),
        serde_json::to_vec(&model.meta).expect("meta serializes"),
    ] {
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
    }
    out.extend_from_slice(&(model.layout.entries.len() as u32).to_le_bytes());
    for (i, entry) in model.layout.entries.iter().enumerate() {
        out.extend_from_slice(&(entry.name.len() as u16).to_le_bytes());
        out.extend_from_slice(entry.name.as_bytes());
        out.push(entry.shape.len() as u8);
        for &dim in &entry.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &p in model.entry(i) {
            p.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TinyLmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TinyLmError::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TinyLmError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TinyLmError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TinyLmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn json<D: serde::de::DeserializeOwned>(&mut self) -> Result<D, TinyLmError> {
        let len = self.u32()? as usize;
        serde_json::from_slice(self.take(len)?).map_err(|e| TinyLmError::CorruptCheckpoint(e.to_string()))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>, TinyLmError> {
    let corrupt = |m: &str| TinyLmError::CorruptCheckpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(TinyLmError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 12 + 32 {
        return Err(corrupt("truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }

    let mut r = Reader { bytes: body, pos: 12 };
    let dtype = DType::from_code(r.u8()?).ok_or_else(|| corrupt("unknown dtype"))?;
    if dtype != T::DTYPE {
        return Err(TinyLmError::CorruptCheckpoint(format!("stored {dtype:?}, requested {:?}", T::DTYPE)));
    }
    let config: ModelConfig = r.json()?;
    config.validate()?;
    let meta: TrainingMeta = r.json()?;
    let layout = super::ParamLayout::new(&config);
    let n_arrays = r.u32()? as usize;
    if n_arrays != layout.entries.len() {
        return Err(corrupt("array count does not match config"));
    }
    let width = std::mem::size_of::<T>();
    let mut params = Vec::with_capacity(layout.total);
    for entry in &layout.entries {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| corrupt("array name is not UTF-8"))?;
        if name != entry.name {
            return Err(TinyLmError::CorruptCheckpoint(format!("expected array {}, found {name}", entry.name)));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if shape != entry.shape {
            return Err(TinyLmError::CorruptCheckpoint(format!("shape mismatch for {name}")));
        }
        let raw = r.take(entry.len * width)?;
        params.extend(raw.chunks_exact(width).map(T::read_le));
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Model::from_parts(config, params, meta))
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<(), TinyLmError> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>, TinyLmError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model<f32> {
        let mut m = Model::new(ModelConfig::small()).unwrap();
        m.meta.steps = 42;
        m.meta.dataset_hash = "abc".into();
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let back: Model<f32> = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        let toks = [crate::tinylm::Vocab::BOS, 2, 163, 3];
        let a = m.forward(&toks, &[], false).unwrap();
        let b = back.forward(&toks, &[], false).unwrap();
        assert!(a.logits.iter().zip(&b.logits).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = to_bytes(&small());
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(from_bytes::<f32>(&bytes[..cut]), Err(TinyLmError::CorruptCheckpoint(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn version_bump_is_rejected() {
        let mut bytes = to_bytes(&small());
        bytes[8] += 1;
        assert!(matches!(
            from_bytes::<f32>(&bytes),
            Err(TinyLmError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = to_bytes(&small());
        let i = bytes.len() - 100;
        bytes[i] ^= 1;
        assert!(matches!(from_bytes::<f32>(&bytes), Err(TinyLmError::CorruptCheckpoint(_))));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let bytes = to_bytes(&small());
        assert!(from_bytes::<f64>(&bytes).is_err());
    }
}
