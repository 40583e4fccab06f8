//! Little-endian byte encoding shared by every binary artifact (price
//! tables, sample sets, checkpoints, audit logs). All multi-byte values are
//! little-endian; variable-length sequences carry a u32 count prefix.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unexpected end of buffer at offset {0}")]
    Truncated(usize),
    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: [u8; 8] },
    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("invalid utf-8 in encoded string")]
    Utf8,
    #[error("length {0} exceeds sanity cap")]
    LengthCap(u64),
}

pub fn put_u8(buf: &mut Vec<u8>, v: u8) {
    buf.push(v);
}

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_i64(buf: &mut Vec<u8>, v: i64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64_slice(buf: &mut Vec<u8>, vs: &[f64]) {
    put_u32(buf, vs.len() as u32);
    for v in vs {
        put_f64(buf, *v);
    }
}

pub fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn put_bytes(buf: &mut Vec<u8>, bs: &[u8]) {
    put_u32(buf, bs.len() as u32);
    buf.extend_from_slice(bs);
}

/// Sequential reader over an encoded buffer.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

// Guards against nonsense counts in corrupted files.
const LEN_CAP: u64 = 1 << 32;

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>, CodecError> {
        let n = self.u32()? as u64;
        if n.saturating_mul(8) > LEN_CAP {
            return Err(CodecError::LengthCap(n));
        }
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::Utf8)
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let n = self.u32()? as u64;
        if n > LEN_CAP {
            return Err(CodecError::LengthCap(n));
        }
        Ok(self.take(n as usize)?.to_vec())
    }

    pub fn array32(&mut self) -> Result<[u8; 32], CodecError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    /// Checks an 8-byte magic followed by a u32 version.
    pub fn header(&mut self, magic: &[u8; 8], version: u32) -> Result<(), CodecError> {
        let found = self.take(8)?;
        if found != magic {
            return Err(CodecError::BadMagic { expected: *magic });
        }
        let v = self.u32()?;
        if v != version {
            return Err(CodecError::Version { found: v, expected: version });
        }
        Ok(())
    }
}

pub fn put_header(buf: &mut Vec<u8>, magic: &[u8; 8], version: u32) {
    buf.extend_from_slice(magic);
    put_u32(buf, version);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_scalars() {
        let mut buf = Vec::new();
        put_header(&mut buf, b"TESTMAGC", 3);
        put_u32(&mut buf, 7);
        put_f64(&mut buf, -0.25);
        put_str(&mut buf, "AAPL");
        put_f64_slice(&mut buf, &[1.0, 2.5]);

        let mut r = Reader::new(&buf);
        r.header(b"TESTMAGC", 3).unwrap();
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.f64().unwrap(), -0.25);
        assert_eq!(r.str().unwrap(), "AAPL");
        assert_eq!(r.f64_vec().unwrap(), vec![1.0, 2.5]);
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn truncated_buffer_is_an_error() {
        let mut buf = Vec::new();
        put_u32(&mut buf, 100);
        let mut r = Reader::new(&buf);
        assert!(r.f64_vec().is_err());
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut buf = Vec::new();
        put_header(&mut buf, b"AAAABBBB", 1);
        let mut r = Reader::new(&buf);
        assert!(r.header(b"CCCCDDDD", 1).is_err());
    }
}
