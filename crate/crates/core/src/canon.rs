//! Canonical byte serialization shared by blocks, transactions and contract
//! arguments.
//!
//! Fields are written in declaration order. Integers are big-endian and
//! fixed-width; byte strings and UTF-8 strings carry a 4-byte big-endian length
//! prefix. Fixed-size digests are written raw. Decoding is strict: every length
//! is checked against the remaining input before anything is allocated.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonError {
    #[error("truncated input: needed {needed} bytes, {remaining} remaining")]
    Truncated { needed: usize, remaining: usize },
    #[error("invalid utf-8 in string field")]
    BadUtf8,
    #[error("invalid tag {0} for {1}")]
    BadTag(u8, &'static str),
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
    #[error("field too long: {0} bytes")]
    TooLong(usize),
}

/// Appends canonical fields to a byte buffer.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
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

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Raw bytes with no length prefix (fixed-size fields).
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Length-prefixed byte string.
    ///
    /// # Panics
    ///
    /// If `bytes` is longer than `u32::MAX`.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("field exceeds u32 length prefix");
        self.u32(len);
        self.raw(bytes)
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Reads canonical fields from a borrowed buffer.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CanonError> {
        if self.remaining() < n {
            return Err(CanonError::Truncated {
                needed: n,
                remaining: self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CanonError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CanonError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CanonError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CanonError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CanonError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, CanonError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, CanonError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(CanonError::BadTag(t, "bool")),
        }
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], CanonError> {
        self.take(n)
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], CanonError> {
        self.array()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CanonError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn str(&mut self) -> Result<&'a str, CanonError> {
        std::str::from_utf8(self.bytes()?).map_err(|_| CanonError::BadUtf8)
    }

    pub fn string(&mut self) -> Result<String, CanonError> {
        self.str().map(str::to_owned)
    }

    /// Fails unless the whole buffer has been consumed.
    pub fn finish(self) -> Result<(), CanonError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CanonError::Trailing(n)),
        }
    }
}

/// Types with a canonical encoding.
pub trait Canonical: Sized {
    fn encode_into(&self, enc: &mut Encoder);
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError>;

    fn to_canonical(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }

    fn from_canonical(bytes: &[u8]) -> Result<Self, CanonError> {
        let mut dec = Decoder::new(bytes);
        let v = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(v)
    }
}

impl Canonical for String {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(self);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        dec.string()
    }
}

impl Canonical for u64 {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u64(*self);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        dec.u64()
    }
}

/// Lists are a 4-byte count followed by the elements.
impl<T: Canonical> Canonical for Vec<T> {
    fn encode_into(&self, enc: &mut Encoder) {
        let n = u32::try_from(self.len()).expect("list exceeds u32 count");
        enc.u32(n);
        for item in self {
            item.encode_into(enc);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        let n = dec.u32()? as usize;
        // every element occupies at least one byte, so this bounds the allocation
        if n > dec.remaining() {
            return Err(CanonError::Truncated {
                needed: n,
                remaining: dec.remaining(),
            });
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(T::decode_from(dec)?);
        }
        Ok(out)
    }
}

impl<A: Canonical, B: Canonical> Canonical for (A, B) {
    fn encode_into(&self, enc: &mut Encoder) {
        self.0.encode_into(enc);
        self.1.encode_into(enc);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok((A::decode_from(dec)?, B::decode_from(dec)?))
    }
}
