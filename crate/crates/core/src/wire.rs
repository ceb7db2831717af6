//! Deterministic binary encoding shared by leaves, ledgers, and proof files.
//!
//! Integers are big-endian, digests and keys are raw fixed-size bytes,
//! variable-length byte strings and lists carry a `u32` big-endian prefix.
//! Decoding is strict: unknown tags, non-canonical booleans, and trailing
//! bytes are all errors. See `docs/wire-format.md` for the full table.

use thiserror::Error;

use crate::hashtree::{Digest, InclusionProof, Side, DIGEST_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid {what} at byte {offset}")]
    Invalid { what: &'static str, offset: usize },
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.raw(d.as_bytes())
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.len(bytes.len()).raw(bytes)
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        self.u32(u32::try_from(n).expect("length fits in u32"))
    }

    pub fn put<T: Encode + ?Sized>(&mut self, value: &T) -> &mut Self {
        value.encode(self);
        self
    }

    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        self.len(items.len());
        for item in items {
            item.encode(self);
        }
        self
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }

    pub fn invalid(&self, what: &'static str) -> WireError {
        WireError::Invalid { what, offset: self.pos }
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated(self.buf.len()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.raw(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.raw(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn digest(&mut self) -> Result<Digest, WireError> {
        Ok(Digest::from(self.array::<DIGEST_LEN>()?))
    }

    pub fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(self.invalid("boolean")),
        }
    }

    /// Reads a `u32` count, refusing counts that cannot fit in what is left
    /// assuming each element takes at least `min_size` bytes.
    pub fn count(&mut self, min_size: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size.max(1)) > self.remaining() {
            return Err(WireError::Truncated(self.buf.len()));
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.count(1)?;
        self.raw(n)
    }

    pub fn get<T: Decode>(&mut self) -> Result<T, WireError> {
        T::decode(self)
    }

    pub fn list<T: Decode>(&mut self, min_size: usize) -> Result<Vec<T>, WireError> {
        let n = self.count(min_size)?;
        (0..n).map(|_| T::decode(self)).collect()
    }
}

pub trait Encode {
    fn encode(&self, w: &mut Writer);

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }
}

pub trait Decode: Sized {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError>;

    /// Decodes a complete buffer; leftover bytes are an error.
    fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let value = Self::decode(&mut r)?;
        r.finish()?;
        Ok(value)
    }
}

impl Encode for Digest {
    fn encode(&self, w: &mut Writer) {
        w.digest(self);
    }
}

impl Decode for Digest {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.digest()
    }
}

impl Encode for InclusionProof {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.leaf_index).u64(self.tree_size).len(self.audit_path.len());
        for (side, digest) in &self.audit_path {
            w.u8(match side {
                Side::Left => 0,
                Side::Right => 1,
            })
            .digest(digest);
        }
    }
}

impl Decode for InclusionProof {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let leaf_index = r.u64()?;
        let tree_size = r.u64()?;
        let n = r.count(1 + DIGEST_LEN)?;
        let mut audit_path = Vec::with_capacity(n);
        for _ in 0..n {
            let side = match r.u8()? {
                0 => Side::Left,
                1 => Side::Right,
                _ => return Err(r.invalid("path side")),
            };
            audit_path.push((side, r.digest()?));
        }
        Ok(InclusionProof {
            leaf_index,
            tree_size,
            audit_path,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashtree::MerkleTree;

    #[test]
    fn inclusion_proof_round_trip() {
        let tree = MerkleTree::new((0..7u8).map(|i| vec![i]).collect()).unwrap();
        let proof = tree.prove(5).unwrap();
        let bytes = proof.to_bytes();
        assert_eq!(bytes.len(), 8 + 8 + 4 + proof.audit_path.len() * 33);
        assert_eq!(InclusionProof::from_bytes(&bytes).unwrap(), proof);
    }

    #[test]
    fn strict_decoding() {
        let tree = MerkleTree::new(vec![vec![1], vec![2]]).unwrap();
        let mut bytes = tree.prove(0).unwrap().to_bytes();
        bytes.push(0);
        assert_eq!(
            InclusionProof::from_bytes(&bytes),
            Err(WireError::TrailingBytes(1))
        );
        bytes.pop();
        bytes[20] = 2;
        assert!(matches!(
            InclusionProof::from_bytes(&bytes),
            Err(WireError::Invalid { what: "path side", .. })
        ));
        assert!(matches!(
            InclusionProof::from_bytes(&bytes[..10]),
            Err(WireError::Truncated(_))
        ));
    }

    #[test]
    fn oversized_counts_rejected() {
        let mut w = Writer::new();
        w.u64(0).u64(1).u32(u32::MAX);
        assert!(matches!(
            InclusionProof::from_bytes(&w.into_bytes()),
            Err(WireError::Truncated(_))
        ));
    }
}
