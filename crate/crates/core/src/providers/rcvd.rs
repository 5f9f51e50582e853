//! RCVD embedding files.
//!
//! Layout, little-endian:
//!
//! | offset | size | field                |
//! |--------|------|----------------------|
//! | 0      | 4    | magic `RCVD`         |
//! | 4      | 4    | version (u32, = 1)   |
//! | 8      | 4    | dim (u32)            |
//! | 12     | 8    | n_frames (u64)       |
//! | 20     | 4    | stride (u32)         |
//! | 24     | ...  | n_frames × dim f32   |

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::EmbeddingVector;

pub const MAGIC: &[u8; 4] = b"RCVD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const DEFAULT_STRIDE: u32 = 16;

/// Raw contents of an embedding file, rows exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RcvdFile {
    pub dim: u32,
    pub stride: u32,
    /// Row-major, `n_frames * dim` values.
    pub data: Vec<f32>,
}

impl RcvdFile {
    pub fn new(dim: u32, stride: u32, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim as usize) {
            return Err(Error::Invalid(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, stride, data })
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.dim as usize
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim as usize)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&(self.n_frames() as u64).to_le_bytes());
        out.extend_from_slice(&self.stride.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!(
                "expected a {HEADER_LEN}-byte header, got {} bytes",
                bytes.len()
            ));
        }
        if &bytes[..4] != MAGIC {
            return Err(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dim = u32_at(8);
        let n_frames = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let stride = u32_at(20);
        if dim == 0 {
            return Err("dimension is zero".into());
        }
        let expected = n_frames
            .checked_mul(dim as u64)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| "payload size overflows".to_string())?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != expected {
            return Err(format!("expected {expected} bytes, got {}", payload.len()));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err("payload contains NaN or infinite values".into());
        }
        Ok(Self { dim, stride, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|reason| Error::EmbeddingFile {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// Rows as unit vectors.
    pub fn embeddings(&self) -> Result<Vec<EmbeddingVector>> {
        self.rows()
            .map(|row| EmbeddingVector::normalize(row.iter().map(|&v| v as f64).collect()))
            .collect()
    }
}

/// A video's frame embeddings, one per sampled frame, L2-normalized on load.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbeddings {
    pub stride: u32,
    pub frames: Vec<EmbeddingVector>,
}

pub fn load_embedding_file(path: &Path) -> Result<VideoEmbeddings> {
    let file = RcvdFile::read(path)?;
    let frames = file.embeddings().map_err(|e| Error::EmbeddingFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(VideoEmbeddings {
        stride: file.stride,
        frames,
    })
}
