//! Self-describing parameter container.
//!
//! Layout: `b"STOKCKPT"`, `u32` version, `u32` metadata length, JSON
//! metadata, `u32` tensor count, then per tensor `u16` name length, name,
//! `u8` rank, `rank x u32` dims and little-endian `f32` values. A SHA-256
//! digest of everything before it closes the file.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ParamEntry, ParamStore, TokenizerConfig, TokenizerModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STOKCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON; models store their config under `"model"`.
    pub meta: serde_json::Value,
    pub tensors: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            if t.name.len() > u16::MAX as usize || t.shape.len() > u8::MAX as usize {
                return Err(Error::Format(format!("tensor {} cannot be stored", t.name)));
            }
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut cur = Reader(&body[MAGIC.len()..]);
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = cur.u32()? as usize;
        let meta = serde_json::from_slice(cur.take(meta_len)?)?;
        let n = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = cur.u16()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = cur.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = cur.take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(ParamEntry { name, shape, values });
        }
        if !cur.0.is_empty() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::at_path(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::at_path(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl TokenizerModel {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            meta: serde_json::json!({ "model": serde_json::to_value(&self.config)? }),
            tensors: self.params.entries().to_vec(),
        })
    }

    /// Reads the model config and its parameters; other tensors (such as
    /// optimizer state) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = ckpt
            .meta
            .get("model")
            .ok_or_else(|| Error::Format("checkpoint has no model config".into()))?;
        let config: TokenizerConfig = serde_json::from_value(cfg.clone())?;
        let layout = super::init_params(&config)?;
        let mut params = ParamStore::new();
        for e in layout.entries() {
            let t = ckpt
                .tensor(&e.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {}", e.name)))?;
            if t.shape != e.shape {
                return Err(Error::Format(format!("parameter {} has shape {:?}, expected {:?}", e.name, t.shape, e.shape)));
            }
            params.push(t.name.clone(), t.shape.clone(), t.values.clone())?;
        }
        Self::from_params(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> TokenizerModel {
        TokenizerModel::new(TokenizerConfig {
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_model: 8,
            compression_k: 2,
            ..TokenizerConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = small_model();
        let bytes = m.to_checkpoint().unwrap().to_bytes().unwrap();
        let back = TokenizerModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corruption_detected() {
        let m = small_model();
        let mut bytes = m.to_checkpoint().unwrap().to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = small_model();
        m.save(&path).unwrap();
        assert_eq!(TokenizerModel::load(&path).unwrap(), m);
    }
}
