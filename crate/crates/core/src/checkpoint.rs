//! Versioned binary container for model parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "HCKP"
//! u32    format version
//! u32    metadata entry count, then per entry: u32 len + key, u32 len + value
//! u32    array count, then per array: u32 len + name, u32 rank,
//!        rank x u64 dims, product(dims) x f64
//! ```
//!
//! Entries are sorted by name, so equal models serialize to equal bytes.
//! Readers ignore names they do not know.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"HCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    meta: BTreeMap<String, String>,
    arrays: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn put_tensor(&mut self, name: &str, t: &Tensor) {
        self.arrays.insert(name.to_string(), t.clone());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata '{key}'")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("bad value '{raw}' for '{key}'")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        self.arrays
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("missing array '{name}'")))
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
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
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version > FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let mut c = Container::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            c.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            c.arrays.insert(name, Tensor::new(shape, data)?);
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut c = Container::new();
        c.put_meta("delta", 10);
        c.put_tensor(
            "w",
            &Tensor::matrix(2, 2, vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25]),
        );
        let bytes = c.to_bytes();
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Container::from_bytes(b"nope").is_err());
    }
}
