//! Little-endian cursor shared by the binary readers.

use crate::{MisdError, Result};

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, expected_total: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(MisdError::Length { expected: expected_total.max(self.pos + n), found: self.bytes.len() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u16(&mut self, expected_total: usize) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, expected_total)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self, expected_total: usize) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, expected_total)?.try_into().expect("4 bytes")))
    }

    pub fn f32s(&mut self, n: usize, expected_total: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, expected_total)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    /// Reads `count` u16-length-prefixed UTF-8 strings.
    pub fn names(&mut self, count: usize, fixed_len: usize) -> Result<Vec<String>> {
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = self.u16(fixed_len)? as usize;
            let raw = self.take(len, self.pos + len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| MisdError::Format("class name is not valid UTF-8".into()))?;
            names.push(name.to_string());
        }
        Ok(names)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(MisdError::Length { expected: self.pos, found: self.bytes.len() });
        }
        Ok(())
    }
}

pub(crate) fn push_names(out: &mut Vec<u8>, names: &[String]) -> Result<()> {
    for name in names {
        let len = u16::try_from(name.len())
            .map_err(|_| MisdError::Data(format!("class name longer than {} bytes", u16::MAX)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    Ok(())
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| MisdError::Data(format!("{what} {v} does not fit in u32")))
}
