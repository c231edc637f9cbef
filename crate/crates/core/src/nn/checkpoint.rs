//! Checkpoint archive: `EEGVCKPT` magic, a little-endian `u64` header length,
//! a JSON header (kind, config, metadata, tensor table, content hash) and the
//! concatenated `f32` little-endian parameter payload.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hash::{f32_from_le_bytes, f32_le_bytes, ContentHasher};

const MAGIC: &[u8; 8] = b"EEGVCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: Value,
    meta: Value,
    tensors: Vec<TensorEntry>,
    content_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub meta: Value,
    pub tensors: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: Value, meta: Value, tensors: Vec<NamedArray>) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            meta,
            tensors,
        }
    }

    fn table(&self) -> Vec<TensorEntry> {
        let mut offset = 0;
        self.tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    len: t.data.len(),
                };
                offset += t.data.len();
                e
            })
            .collect()
    }

    fn payload(&self) -> Vec<u8> {
        self.tensors.iter().flat_map(|t| f32_le_bytes(&t.data)).collect()
    }

    fn hash_parts(kind: &str, config: &Value, meta: &Value, table: &[TensorEntry], payload: &[u8]) -> Result<String> {
        let mut h = ContentHasher::new();
        h.update(kind)
            .update(serde_json::to_vec(config)?)
            .update(serde_json::to_vec(meta)?)
            .update(serde_json::to_vec(table)?)
            .update(payload);
        Ok(h.finish())
    }

    pub fn content_hash(&self) -> Result<String> {
        Self::hash_parts(&self.kind, &self.config, &self.meta, &self.table(), &self.payload())
    }

    /// Writes the archive and returns its content hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Geometry(format!("tensor `{}` shape/data mismatch", t.name)));
            }
        }
        let table = self.table();
        let payload = self.payload();
        let content_hash = Self::hash_parts(&self.kind, &self.config, &self.meta, &table, &payload)?;
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: table,
            content_hash: content_hash.clone(),
        })?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let io = |e| Error::io(path, e);
        f.write_all(MAGIC).map_err(io)?;
        f.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        f.write_all(&header).map_err(io)?;
        f.write_all(&payload).map_err(io)?;
        Ok(content_hash)
    }

    /// Reads an archive, rejecting it when the stored hash does not match.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |what: &str| Error::Data(format!("{}: {what}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint archive"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        let payload = &bytes[header_end..];
        let found = Self::hash_parts(&header.kind, &header.config, &header.meta, &header.tensors, payload)?;
        if found != header.content_hash {
            return Err(Error::HashMismatch {
                path: path.to_path_buf(),
                expected: header.content_hash,
                found,
            });
        }
        let values = f32_from_le_bytes(payload);
        let tensors = header
            .tensors
            .iter()
            .map(|e| {
                let data = values
                    .get(e.offset..e.offset + e.len)
                    .ok_or_else(|| corrupt("tensor table exceeds payload"))?
                    .to_vec();
                Ok(NamedArray {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: header.kind,
            config: header.config,
            meta: header.meta,
            tensors,
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Data(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        Checkpoint::new(
            "encoder",
            json!({"embed_dim": 4}),
            json!({"epoch": 2}),
            vec![
                NamedArray {
                    name: "a".into(),
                    shape: vec![2, 2],
                    data: vec![1.0, -2.0, 3.5, 0.25],
                },
                NamedArray {
                    name: "b".into(),
                    shape: vec![1],
                    data: vec![7.0],
                },
            ],
        )
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        let hash = ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.content_hash().unwrap(), hash);
    }

    #[test]
    fn tampered_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        sample().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"hello").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
