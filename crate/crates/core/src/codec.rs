//! Little-endian primitives shared by the log and checkpoint formats.

use crate::error::FormatError;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn with_capacity(n: usize) -> Self {
        Writer {
            buf: Vec::with_capacity(n),
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                section,
                offset: self.offset(),
                expected: n as u64,
                actual: self.remaining() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Checks that `n` items of `width` bytes are available without consuming them.
    pub fn expect(&self, n: u64, width: u64, section: &'static str) -> Result<usize, FormatError> {
        let need = n
            .checked_mul(width)
            .filter(|&b| b <= self.remaining() as u64);
        match need {
            Some(bytes) => Ok(bytes as usize),
            None => Err(FormatError::Truncated {
                section,
                offset: self.offset(),
                expected: n.saturating_mul(width),
                actual: self.remaining() as u64,
            }),
        }
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self, section: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, section)?[0])
    }

    pub fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    pub fn u64(&mut self, section: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().unwrap(),
        ))
    }

    pub fn u64s(&mut self, n: u64, section: &'static str) -> Result<Vec<u64>, FormatError> {
        let bytes = self.expect(n, 8, section)?;
        let raw = self.take(bytes, section)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64s(&mut self, n: u64, section: &'static str) -> Result<Vec<f64>, FormatError> {
        let start = self.offset();
        let bytes = self.expect(n, 8, section)?;
        let raw = self.take(bytes, section)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(FormatError::Invalid {
                offset: start + 8 * i as u64,
                reason: format!("non-finite value in {section}"),
            });
        }
        Ok(values)
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::Invalid {
                offset: self.offset(),
                reason: format!("{} trailing bytes", self.remaining()),
            });
        }
        Ok(())
    }
}
