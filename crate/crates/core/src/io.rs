//! Binary containers for videos and masks.
//!
//! Video container: magic "DMV1", four u32 little-endian dims N, C, H, W,
//! then N*C*H*W f32 little-endian values, frame-major then channel-major
//! then row-major. Mask container: magic "DMM1", dims N, H, W, then one byte
//! per pixel in {0, 1}.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::CoreError;
use crate::video::{MaskSequence, Video};

pub const VIDEO_MAGIC: &[u8; 4] = b"DMV1";
pub const MASK_MAGIC: &[u8; 4] = b"DMM1";
pub const PARAMS_MAGIC: &[u8; 4] = b"DMP1";

/// Elements per container are capped so corrupt headers cannot trigger huge
/// allocations. 64 frames at 128x128x4 channels fits comfortably.
pub const MAX_ELEMENTS: u64 = 1 << 28;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("BAD_MAGIC: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("SHORT_READ: needed {needed} more bytes at offset {offset}")]
    ShortRead { needed: usize, offset: usize },

    #[error("DIM_OVERFLOW: dims {dims:?} exceed the container limit")]
    DimOverflow { dims: Vec<u64> },

    #[error("BAD_VALUE: {0}")]
    BadValue(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl ContainerError {
    /// Stable machine-readable code for CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            ContainerError::BadMagic { .. } => "BAD_MAGIC",
            ContainerError::ShortRead { .. } => "SHORT_READ",
            ContainerError::DimOverflow { .. } => "DIM_OVERFLOW",
            ContainerError::BadValue(_) => "BAD_VALUE",
            ContainerError::Io(_) => "IO",
            ContainerError::Core(_) => "INTERNAL",
        }
    }
}

pub type IoResult<T> = std::result::Result<T, ContainerError>;

/// Byte-stream reader with positional short-read errors.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> IoResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ContainerError::ShortRead {
                needed: self.pos + n - self.buf.len(),
                offset: self.pos,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> IoResult<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32_vec(&mut self, count: usize) -> IoResult<Vec<f32>> {
        let b = self.take(count * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> IoResult<()> {
        let b = self.take(4)?;
        if b != expected {
            return Err(ContainerError::BadMagic {
                expected: *expected,
                found: [b[0], b[1], b[2], b[3]],
            });
        }
        Ok(())
    }

    pub fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn check_dims(dims: &[u64]) -> IoResult<usize> {
    let mut prod: u64 = 1;
    for d in dims {
        if *d == 0 {
            return Err(ContainerError::BadValue(format!("zero dimension in {:?}", dims)));
        }
        prod = prod.checked_mul(*d).ok_or(ContainerError::DimOverflow { dims: dims.to_vec() })?;
        if prod > MAX_ELEMENTS {
            return Err(ContainerError::DimOverflow { dims: dims.to_vec() });
        }
    }
    Ok(prod as usize)
}

pub fn encode_video(v: &Video) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + v.data().len() * 4);
    out.extend_from_slice(VIDEO_MAGIC);
    for d in [v.frames(), v.channels(), v.height(), v.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_video(bytes: &[u8]) -> IoResult<Video> {
    let mut c = Cursor::new(bytes);
    c.magic(VIDEO_MAGIC)?;
    let n = c.u32()? as u64;
    let ch = c.u32()? as u64;
    let h = c.u32()? as u64;
    let w = c.u32()? as u64;
    let count = check_dims(&[n, ch, h, w])?;
    let data = c.f32_vec(count)?;
    if !c.finished() {
        return Err(ContainerError::BadValue("trailing bytes after payload".into()));
    }
    Ok(Video::new(n as usize, ch as usize, h as usize, w as usize, data)?)
}

pub fn save_video(path: impl AsRef<Path>, v: &Video) -> IoResult<()> {
    fs::write(path, encode_video(v))?;
    Ok(())
}

pub fn load_video(path: impl AsRef<Path>) -> IoResult<Video> {
    decode_video(&fs::read(path)?)
}

pub fn encode_mask(m: &MaskSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.values().len());
    out.extend_from_slice(MASK_MAGIC);
    for d in [m.frames(), m.height(), m.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(m.values());
    out
}

pub fn decode_mask(bytes: &[u8]) -> IoResult<MaskSequence> {
    let mut c = Cursor::new(bytes);
    c.magic(MASK_MAGIC)?;
    let n = c.u32()? as u64;
    let h = c.u32()? as u64;
    let w = c.u32()? as u64;
    let count = check_dims(&[n, h, w])?;
    let raw = c.take(count)?;
    if !c.finished() {
        return Err(ContainerError::BadValue("trailing bytes after payload".into()));
    }
    if let Some(bad) = raw.iter().find(|b| **b > 1) {
        return Err(ContainerError::BadValue(format!("mask byte {} outside {{0,1}}", bad)));
    }
    Ok(MaskSequence::new(n as usize, h as usize, w as usize, raw.to_vec())?)
}

pub fn save_mask(path: impl AsRef<Path>, m: &MaskSequence) -> IoResult<()> {
    fs::write(path, encode_mask(m))?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> IoResult<MaskSequence> {
    decode_mask(&fs::read(path)?)
}
