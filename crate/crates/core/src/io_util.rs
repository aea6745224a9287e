//! Little-endian binary block helpers shared by the MDAT/MEXT/MCRT/MMRK/MPRB
//! file formats. The reader tracks its byte offset so parse errors can name
//! the exact position.

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} at byte {offset} (expected {expected})")]
    BadVersion { offset: usize, expected: u32, found: u32 },
    #[error("truncated payload: needed {needed} bytes at byte {offset}, only {available} left")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("{what} at byte {offset}: {detail}")]
    Invalid { offset: usize, what: &'static str, detail: String },
    #[error("trailing garbage: {extra} unread bytes at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4)?;
        if got != expected {
            return Err(FormatError::BadMagic {
                expected: *expected,
                found: [got[0], got[1], got[2], got[3]],
            });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<(), FormatError> {
        let offset = self.pos;
        let found = self.u32()?;
        if found != expected {
            return Err(FormatError::BadVersion { offset, expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads `n` little-endian f32 values.
    pub fn f32_block(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::TrailingBytes {
                offset: self.pos,
                extra: self.remaining(),
            });
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn magic(&mut self, m: &[u8; 4]) -> &mut Self {
        self.buf.extend_from_slice(m);
        self
    }

    pub fn u8(&mut self, x: u8) -> &mut Self {
        self.buf.push(x);
        self
    }

    pub fn u32(&mut self, x: u32) -> &mut Self {
        self.buf.extend_from_slice(&x.to_le_bytes());
        self
    }

    pub fn u64(&mut self, x: u64) -> &mut Self {
        self.buf.extend_from_slice(&x.to_le_bytes());
        self
    }

    pub fn f32(&mut self, x: f32) -> &mut Self {
        self.buf.extend_from_slice(&x.to_le_bytes());
        self
    }

    pub fn f32_block(&mut self, xs: &[f32]) -> &mut Self {
        for &x in xs {
            self.f32(x);
        }
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_primitives() {
        let mut w = ByteWriter::new();
        w.magic(b"MDAT").u32(1).u64(42).u8(3).f32(0.25);
        let bytes = w.into_bytes();
        let mut r = ByteReader::new(&bytes);
        r.magic(b"MDAT").unwrap();
        assert_eq!(r.u32().unwrap(), 1);
        assert_eq!(r.u64().unwrap(), 42);
        assert_eq!(r.u8().unwrap(), 3);
        assert_eq!(r.f32().unwrap(), 0.25);
        r.finish().unwrap();
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = b"MDAT\x01\x00".to_vec();
        let mut r = ByteReader::new(&bytes);
        r.magic(b"MDAT").unwrap();
        match r.u32() {
            Err(FormatError::Truncated { offset: 4, needed: 4, available: 2 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn bad_magic_names_both_values() {
        let bytes = b"XXXX".to_vec();
        let mut r = ByteReader::new(&bytes);
        match r.magic(b"MDAT") {
            Err(FormatError::BadMagic { expected, found }) => {
                assert_eq!(&expected, b"MDAT");
                assert_eq!(&found, b"XXXX");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }
}
