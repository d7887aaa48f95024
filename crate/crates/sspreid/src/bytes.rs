use crate::error::DecodeError;

/// Little-endian cursor over a file image.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < n {
            return Err(DecodeError::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        self.pos += n;
        Ok(&rest[..n])
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<(), DecodeError> {
        match self.take(4) {
            Ok(m) if m == magic => Ok(()),
            _ => Err(DecodeError::Header(format!(
                "expected magic {}",
                String::from_utf8_lossy(magic)
            ))),
        }
    }

    pub fn version(&mut self, version: u8) -> Result<(), DecodeError> {
        let v = self
            .u8()
            .map_err(|_| DecodeError::Header("missing version byte".into()))?;
        if v != version {
            return Err(DecodeError::Header(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DecodeError> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| DecodeError::Header("declared size overflows".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Checks the unread length against a size implied by the header.
    pub fn expect_remaining(&self, n: usize) -> Result<(), DecodeError> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            Err(DecodeError::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            })
        } else if rest > n {
            Err(DecodeError::Trailing { extra: rest - n })
        } else {
            Ok(())
        }
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        self.expect_remaining(0)
    }
}
