//! Self-describing binary container shared by predictor and policy checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "XSEGCKPT"
//! version    u32      FORMAT_VERSION
//! kind       u32      1 = predictor ensemble, 2 = policy
//! meta_len   u32      length of the JSON metadata block (dims, seeds, ...)
//! meta       meta_len bytes of UTF-8 JSON
//! n_arrays   u32
//! repeated n_arrays times:
//!   name_len u32, name (UTF-8), len u64, len x f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"XSEGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Kind {
    Predictor = 1,
    Policy = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: Kind,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: Kind, meta: serde_json::Value) -> Self {
        Self {
            kind,
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) {
        self.arrays.push((name.into(), values.to_vec()));
    }

    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing array '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, values) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let kind = match cur.u32()? {
            1 => Kind::Predictor,
            2 => Kind::Policy,
            k => return Err(Error::Checkpoint(format!("unknown checkpoint kind {k}"))),
        };
        let meta_len = cur.u32()? as usize;
        let meta = serde_json::from_slice(cur.take(meta_len)?)?;
        let n = cur.u32()? as usize;
        let mut arrays = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let len = cur.u64()? as usize;
            let raw = cur.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint("array too large".into()))?,
            )?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push((name, values));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last array".into()));
        }
        Ok(Self { kind, meta, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bit_exact_round_trip(bits in prop::collection::vec(any::<u64>(), 0..64), seed in any::<u64>()) {
            let values: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
            let mut ck = Checkpoint::new(Kind::Policy, serde_json::json!({"seed": seed}));
            ck.push("a", &values);
            ck.push("b", &[1.5]);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            let got: Vec<u64> = back.array("a").unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
            prop_assert_eq!(back.meta["seed"].as_u64(), Some(seed));
        }
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::new(Kind::Predictor, serde_json::json!({}));
        let mut bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        bytes[0] = b'Y';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let mut bytes = ck.to_bytes();
        bytes[8] = 9;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
