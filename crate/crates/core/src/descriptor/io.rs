//! Binary descriptor files, little-endian throughout:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "SKDC"
//! 4       4         u32 version (1)
//! 8       4         u32 count
//! 12      4         u32 dim D
//! 16      count * (8 + 4D)
//!                   f32 x, f32 y, D x f32 descriptor
//! ```

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKDC";
const VERSION: u32 = 1;

/// Descriptors at keypoint positions, one row of `dim` floats per point.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    pub points: Vec<(f32, f32)>,
    /// Row-major `points.len() x dim`.
    pub data: Vec<f32>,
}

impl DescriptorSet {
    pub fn new(dim: usize, points: Vec<(f32, f32)>, data: Vec<f32>) -> Result<Self> {
        if data.len() != points.len() * dim {
            return Err(Error::shape(
                "descriptor set",
                format!("{} points x {dim} dims vs {} values", points.len(), data.len()),
            ));
        }
        Ok(DescriptorSet { dim, points, data })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (i, &(x, y)) in self.points.iter().enumerate() {
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
            for v in self.row(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |detail: String| Error::format(origin, detail);
        let u32_at = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| bad(format!("truncated header at byte {off}")))
        };
        if bytes.get(..4) != Some(MAGIC.as_slice()) {
            return Err(bad("missing SKDC magic".into()));
        }
        let version = u32_at(4)?;
        if version != VERSION {
            return Err(bad(format!("unsupported descriptor file version {version}")));
        }
        let count = u32_at(8)? as usize;
        let dim = u32_at(12)? as usize;
        let expected = (8 + 4 * dim)
            .checked_mul(count)
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| bad("header sizes overflow".into()))?;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes for {count} x {dim}, found {}", bytes.len())));
        }
        let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        let mut points = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        let mut off = 16;
        for _ in 0..count {
            points.push((f32_at(off), f32_at(off + 4)));
            off += 8;
            for _ in 0..dim {
                data.push(f32_at(off));
                off += 4;
            }
        }
        Ok(DescriptorSet { dim, points, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
