//! Little-endian primitives shared by the FTDS and FTCK containers.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) struct LeReader<R> {
    inner: R,
    format: &'static str,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R, format: &'static str) -> Self {
        Self { inner, format }
    }

    /// Fills `buf`, mapping a short read to a `Truncated` error that names `what`.
    pub fn exact(&mut self, buf: &mut [u8], what: &dyn Fn() -> String) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Truncated {
                format: self.format,
                what: what(),
            },
            _ => Error::Io(e),
        })
    }

    pub fn u8(&mut self, what: &dyn Fn() -> String) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    pub fn u32(&mut self, what: &dyn Fn() -> String) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, what: &dyn Fn() -> String) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32s(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.exact(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn string(&mut self, max_len: usize, what: &dyn Fn() -> String) -> Result<String> {
        let len = self.u32(what)? as usize;
        if len > max_len {
            return Err(Error::Malformed {
                format: self.format,
                reason: format!("{} has implausible length {len}", what()),
            });
        }
        let mut bytes = vec![0u8; len];
        self.exact(&mut bytes, what)?;
        String::from_utf8(bytes).map_err(|_| Error::Malformed {
            format: self.format,
            reason: format!("{} is not valid UTF-8", what()),
        })
    }

    /// True when the underlying reader has no more bytes.
    pub fn at_eof(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(true),
                Ok(_) => return Ok(false),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::Io(e)),
            }
        }
    }
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}
