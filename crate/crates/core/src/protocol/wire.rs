//! Big-endian framing primitives.
//!
//! A frame is `type (1) ‖ body length (4) ‖ body`. Vectors carry a 4-byte
//! count; ciphertexts are fixed-width residues; fixed-point values are 8-byte
//! two's complement; reals are IEEE-754 bit patterns.

use crate::paillier::{PaillierCiphertext, PaillierPublicKey};

use super::ProtocolError;

pub const SETUP: u8 = 1;
pub const VERIFIER_SETUP: u8 = 2;
pub const SUBMISSION: u8 = 3;
pub const AGGREGATE: u8 = 4;
pub const BROADCAST: u8 = 5;

fn malformed(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed(msg.into())
}

pub fn frame(kind: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + body.len());
    out.push(kind);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out
}

/// Returns the body of a frame of the expected type.
pub fn unframe(bytes: &[u8], kind: u8) -> Result<&[u8], ProtocolError> {
    if bytes.len() < 5 {
        return Err(malformed("truncated frame header"));
    }
    if bytes[0] != kind {
        return Err(malformed(format!("expected frame type {kind}, got {}", bytes[0])));
    }
    let len = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
    if bytes.len() != 5 + len {
        return Err(malformed(format!(
            "frame declares {len} body bytes, carries {}",
            bytes.len() - 5
        )));
    }
    Ok(&bytes[5..])
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_inner(self) -> Vec<u8> {
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

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn ciphertext(&mut self, c: &PaillierCiphertext, width: usize) -> &mut Self {
        self.bytes(&c.to_bytes(width))
    }

    pub fn ciphertexts(&mut self, cs: &[PaillierCiphertext], width: usize) -> &mut Self {
        self.u32(cs.len() as u32);
        for c in cs {
            self.ciphertext(c, width);
        }
        self
    }

    pub fn fixed_vec(&mut self, v: &[i64]) -> &mut Self {
        self.u32(v.len() as u32);
        for &x in v {
            self.bytes(&x.to_be_bytes());
        }
        self
    }

    pub fn real_vec(&mut self, v: &[f64]) -> &mut Self {
        self.u32(v.len() as u32);
        for &x in v {
            self.f64(x);
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
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let out = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| malformed("unexpected end of body"))?;
        self.pos += n;
        Ok(out)
    }

    pub fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub fn advance(&mut self, n: usize) {
        self.pos += n;
    }

    pub fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn count(&mut self, elem: usize) -> Result<usize, ProtocolError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(malformed("vector count exceeds body"));
        }
        Ok(n)
    }

    pub fn ciphertext(&mut self, ek: &PaillierPublicKey) -> Result<PaillierCiphertext, ProtocolError> {
        let raw = self.take(ek.ciphertext_width())?;
        Ok(ek.ciphertext_from_bytes(raw)?)
    }

    pub fn ciphertexts(&mut self, ek: &PaillierPublicKey) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
        let n = self.count(ek.ciphertext_width())?;
        (0..n).map(|_| self.ciphertext(ek)).collect()
    }

    pub fn fixed_vec(&mut self) -> Result<Vec<i64>, ProtocolError> {
        let n = self.count(8)?;
        (0..n)
            .map(|_| Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap())))
            .collect()
    }

    pub fn real_vec(&mut self) -> Result<Vec<f64>, ProtocolError> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos != self.buf.len() {
            return Err(malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
