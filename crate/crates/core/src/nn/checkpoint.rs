//! Versioned binary container: a JSON configuration block followed by named
//! tensors stored as little-endian `f64`.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"OFCK"
//! u32    version (= 1)
//! u64    config length, then that many UTF-8 bytes of JSON
//! u64    tensor count
//! per tensor, in name order:
//!   u32 name length, name bytes
//!   u32 rank, rank x u64 dims
//!   prod(dims) x f64
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new(config: serde_json::Value) -> Self {
        Container {
            config,
            tensors: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let cfg_len = r.u64()? as usize;
        let config = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        let n = r.u64()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Container { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes)?, sha256_hex(&bytes)))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint("truncated container".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"nope").is_err());
        let mut c = Container::new(serde_json::json!({"kind": "x"}));
        c.tensors.insert("a".into(), Tensor::from_vec(vec![1.0, 2.0]));
        let mut b = c.to_bytes();
        b.pop();
        assert!(matches!(Container::from_bytes(&b), Err(Error::Checkpoint(_))));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            blocks in proptest::collection::btree_map(
                "[a-z]{1,6}(\\.[a-z0-9]{1,4}){0,2}",
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    proptest::collection::vec(any::<u64>().prop_map(f64::from_bits), r * c)
                        .prop_map(move |v| (r, c, v))
                }),
                0..5,
            )
        ) {
            let mut c = Container::new(serde_json::json!({"kind": "test", "n": blocks.len()}));
            for (name, (r, cols, data)) in &blocks {
                c.tensors.insert(name.clone(), Tensor::new(vec![*r, *cols], data.clone()).unwrap());
            }
            let bytes = c.to_bytes();
            let back = Container::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            for (name, t) in &c.tensors {
                let bits: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
                let got: Vec<u64> = back.tensors[name].data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits, got);
            }
        }
    }
}
