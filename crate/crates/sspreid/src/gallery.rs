//! SSPF feature files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SSPF"  u8 version  u32 count  u32 dim
//! count x { u32 person_id  u16 camera_id  dim x f32 }
//! ```

use std::fmt::Write as _;
use std::path::Path;

use sspreid_core::GalleryEntry;

use crate::bytes::Reader;
use crate::error::{DecodeError, Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"SSPF";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryFile {
    pub dim: usize,
    pub entries: Vec<GalleryEntry<f32>>,
}

impl GalleryFile {
    pub fn new(
        dim: usize,
        entries: Vec<GalleryEntry<f32>>,
    ) -> std::result::Result<Self, DecodeError> {
        if let Some((i, e)) = entries
            .iter()
            .enumerate()
            .find(|(_, e)| e.feature.len() != dim)
        {
            return Err(DecodeError::Content(format!(
                "entry {i} has {} features, expected {dim}",
                e.feature.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    /// Builds a file from entries, taking the dimension from the first one.
    pub fn from_entries(entries: Vec<GalleryEntry<f32>>) -> std::result::Result<Self, DecodeError> {
        let dim = entries.first().map_or(0, |e| e.feature.len());
        Self::new(dim, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.entries.len() * (6 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.person_id.to_le_bytes());
            out.extend_from_slice(&e.camera_id.to_le_bytes());
            for v in &e.feature {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let expected = count
            .checked_mul(6 + 4 * dim)
            .ok_or_else(|| DecodeError::Header("declared size overflows".into()))?;
        r.expect_remaining(expected)?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let person_id = r.u32()?;
            let camera_id = r.u16()?;
            let feature = r.f32s(dim)?;
            entries.push(GalleryEntry::new(person_id, camera_id, feature));
        }
        Ok(Self { dim, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::decode(&bytes).map_err(|e| Error::decode(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode())
    }

    /// One line per entry: person, camera, then the features. For inspection
    /// only; the binary file is the lossless form.
    pub fn to_text(&self) -> String {
        let mut s = format!("# count={} dim={}\n", self.entries.len(), self.dim);
        for e in &self.entries {
            write!(s, "{} {}", e.person_id, e.camera_id).unwrap();
            for v in &e.feature {
                write!(s, " {v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}
