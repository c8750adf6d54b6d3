//! Explanations of a frozen generator, keyed by (sample id, class, layer, depth).
//!
//! File layout, little endian:
//!
//! ```text
//! magic   b"RFNEXPL\0"
//! version u32 = 1
//! count   u64
//! count x { sample_id u64, class u32, layer u32, depth u32, u u32, v u32,
//!           depth*u*v x f32 }
//! ```
//!
//! Entries are written in ascending key order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::engine::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RFNEXPL\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CacheKey {
    pub sample_id: u64,
    pub class: u32,
    pub layer: u32,
    pub depth: u32,
}

impl CacheKey {
    pub fn new(sample_id: u64, class: usize, layer: usize, depth: usize) -> Self {
        Self {
            sample_id,
            class: class as u32,
            layer: layer as u32,
            depth: depth as u32,
        }
    }
}

/// Normalized `[d,u,v]` explanations. Reads take `&self`; inserts need `&mut self`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExplanationCache {
    entries: BTreeMap<CacheKey, Tensor<f32>>,
}

impl ExplanationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &CacheKey) -> Option<&Tensor<f32>> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Stores `value` unless the key is present; a frozen generator never changes an
    /// explanation, so the first value wins.
    pub fn insert(&mut self, key: CacheKey, value: Tensor<f32>) -> Result<()> {
        if value.ndim() != 3 || value.dim(0) != key.depth as usize {
            return Err(Error::Shape(format!(
                "explanation for depth {} has shape {:?}",
                key.depth,
                value.shape()
            )));
        }
        self.entries.entry(key).or_insert(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CacheKey, &Tensor<f32>)> {
        self.entries.iter()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (k, t) in &self.entries {
            out.extend_from_slice(&k.sample_id.to_le_bytes());
            for v in [k.class, k.layer, k.depth, t.dim(1) as u32, t.dim(2) as u32] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not an explanation cache".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported cache version {version}"
            )));
        }
        let count = r.u64()?;
        let mut cache = Self::new();
        for _ in 0..count {
            let sample_id = r.u64()?;
            let (class, layer, depth, u, v) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
            let n = depth as usize * u as usize * v as usize;
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new([depth as usize, u as usize, v as usize], data)
                .map_err(|e| Error::Format(e.to_string()))?;
            cache.insert(
                CacheKey {
                    sample_id,
                    class,
                    layer,
                    depth,
                },
                t,
            )?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after cache entries".into()));
        }
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Format("explanation cache is truncated".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
