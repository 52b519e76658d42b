//! Named parameter collections and their binary serialization.
//!
//! Layout: the 8-byte magic `LTNODE01`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the payload of little-endian `f64` values. The
//! header lists each tensor's name, shape and byte offset into the payload,
//! plus a free-form `meta` object owned by the caller.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LTNODE01";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadHeader {
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: usize,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = tensor;
        } else {
            self.entries.push((name, tensor));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar degrees of freedom.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn header(&self, meta: serde_json::Value) -> PayloadHeader {
        let mut offset = 0;
        let tensors = self
            .entries
            .iter()
            .map(|(name, t)| {
                let nbytes = t.numel() * 8;
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    nbytes,
                };
                offset += nbytes;
                e
            })
            .collect();
        PayloadHeader {
            tensors,
            payload_bytes: offset,
            meta,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W, meta: serde_json::Value) -> Result<()> {
        let header = serde_json::to_vec(&self.header(meta))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, t) in &self.entries {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self, meta: serde_json::Value) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, meta)?;
        Ok(buf)
    }

    /// Parse a full serialized buffer; any length disagreement between the
    /// header and the payload is an integrity error.
    pub fn from_bytes(bytes: &[u8]) -> Result<(ParamSet, serde_json::Value)> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("missing or wrong magic bytes".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(Error::Integrity(format!(
                "header declares {hlen} bytes, only {} present",
                body.len()
            )));
        }
        let header: PayloadHeader = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
        let payload = &body[hlen..];
        if payload.len() != header.payload_bytes {
            return Err(Error::Integrity(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let mut set = ParamSet::new();
        for e in &header.tensors {
            let numel: usize = e.shape.iter().product();
            if e.nbytes != numel * 8 || e.offset + e.nbytes > payload.len() {
                return Err(Error::Integrity(format!("tensor {} has inconsistent extent", e.name)));
            }
            let data = payload[e.offset..e.offset + e.nbytes]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            set.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
        Ok((set, header.meta))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<(ParamSet, serde_json::Value)> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap());
        p.insert("b", Tensor::vector(vec![0.1, 0.2]));
        p.insert("s", Tensor::scalar(-7.0));
        p
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = sample();
        let bytes = p.to_bytes(serde_json::json!({"k": 1})).unwrap();
        let (q, meta) = ParamSet::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta["k"], 1);
        assert_eq!(q.num_scalars(), 7);
    }

    #[test]
    fn truncated_payload_is_integrity_error() {
        let bytes = sample().to_bytes(serde_json::Value::Null).unwrap();
        for cut in [0, 10, 20, bytes.len() - 1] {
            let err = ParamSet::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Integrity(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn offsets_are_contiguous() {
        let h = sample().header(serde_json::Value::Null);
        assert_eq!(h.tensors[1].offset, 32);
        assert_eq!(h.tensors[2].offset, 48);
        assert_eq!(h.payload_bytes, 56);
    }
}
