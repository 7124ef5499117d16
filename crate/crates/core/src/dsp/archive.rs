//! Binary feature archive.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "SPRF1" | u32 n_items | per item: u32 n_frames, u32 n_mels, u32 label, f32 values (row-major)
//! ```

use thiserror::Error;

pub const ARCHIVE_MAGIC: &[u8; 5] = b"SPRF1";

#[derive(Debug, Error, PartialEq)]
pub enum ArchiveError {
    #[error("bad archive magic")]
    BadMagic,
    #[error("archive truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after last item")]
    TrailingBytes(usize),
    #[error("item {index}: {n_frames}x{n_mels} does not match {values} values")]
    ShapeMismatch { index: usize, n_frames: usize, n_mels: usize, values: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveItem {
    pub n_frames: u32,
    pub n_mels: u32,
    pub label: u32,
    pub values: Vec<f32>,
}

pub fn write_archive(items: &[ArchiveItem]) -> Result<Vec<u8>, ArchiveError> {
    let payload: usize = items.iter().map(|i| 12 + 4 * i.values.len()).sum();
    let mut out = Vec::with_capacity(9 + payload);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (index, item) in items.iter().enumerate() {
        if item.n_frames as usize * item.n_mels as usize != item.values.len() {
            return Err(ArchiveError::ShapeMismatch {
                index,
                n_frames: item.n_frames as usize,
                n_mels: item.n_mels as usize,
                values: item.values.len(),
            });
        }
        out.extend_from_slice(&item.n_frames.to_le_bytes());
        out.extend_from_slice(&item.n_mels.to_le_bytes());
        out.extend_from_slice(&item.label.to_le_bytes());
        for v in &item.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ArchiveError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(ArchiveError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_archive(bytes: &[u8]) -> Result<Vec<ArchiveItem>, ArchiveError> {
    if bytes.len() < 5 || &bytes[..5] != ARCHIVE_MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: 5 };
    let n_items = cur.u32()? as usize;
    let mut items = Vec::with_capacity(n_items.min(1 << 16));
    for _ in 0..n_items {
        let n_frames = cur.u32()?;
        let n_mels = cur.u32()?;
        let label = cur.u32()?;
        let count = (n_frames as usize).checked_mul(n_mels as usize).ok_or(ArchiveError::Truncated(cur.pos))?;
        let raw = cur.take(count.checked_mul(4).ok_or(ArchiveError::Truncated(cur.pos))?)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        items.push(ArchiveItem { n_frames, n_mels, label, values });
    }
    if cur.pos != bytes.len() {
        return Err(ArchiveError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(items)
}
