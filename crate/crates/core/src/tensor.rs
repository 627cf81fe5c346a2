//! Dense rank-3 tensors and the BNFT binary file format.
//!
//! Memory layout is channel-planar: all of channel 0 in row-major order, then
//! channel 1, and so on. This keeps each per-class plane contiguous, which the
//! solver relies on when slicing one class at a time.
//!
//! On-disk format "BNFT", version 1 (all integers and floats little-endian):
//!
//! ```text
//! bytes 0..4   ASCII "BNFT"
//! byte  4      version (= 1)
//! bytes 5..17  three u32: height, width, channels
//! payload      height*width*channels f32, channel-planar row-major
//! ```
//!
//! In memory everything is f64; values are converted to f32 on write. NaN or
//! infinity anywhere is an error, never silently clamped.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const BNFT_MAGIC: [u8; 4] = *b"BNFT";
pub const BNFT_VERSION: u8 = 1;
pub const BNFT_HEADER_LEN: usize = 17;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// Builds a tensor, validating dimensions, length, and finiteness.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(height as u64, width as u64, channels as u64)?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} needs {} values, got {}",
                height,
                width,
                channels,
                len,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        let len = checked_len(height as u64, width as u64, channels as u64)?;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f(y, x, c)` at every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut t = Self::zeros(height, width, channels)?;
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    t.data[c * height * width + y * width + x] = f(y, x, c);
                }
            }
        }
        if let Some(index) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(t)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        c * self.height * self.width + y * self.width + x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    /// Contiguous row-major plane of one channel.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Reads a BNFT file.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bnft_bytes(&bytes)
    }

    /// Decodes BNFT bytes; exact inverse of [`Tensor3::to_bnft_bytes`].
    pub fn from_bnft_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != BNFT_MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < BNFT_HEADER_LEN {
            return Err(Error::TruncatedPayload {
                expected: BNFT_HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        if bytes[4] != BNFT_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap());
        let (h, w, c) = (dim(0) as u64, dim(1) as u64, dim(2) as u64);
        let len = checked_len(h, w, c)?;
        let expected = BNFT_HEADER_LEN as u64 + 4 * len as u64;
        if (bytes.len() as u64) < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: bytes.len() as u64,
            });
        }
        if bytes.len() as u64 > expected {
            return Err(Error::TrailingBytes);
        }
        let mut data = Vec::with_capacity(len);
        for (i, chunk) in bytes[BNFT_HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index: i });
            }
            data.push(v as f64);
        }
        Ok(Self {
            height: h as usize,
            width: w as usize,
            channels: c as usize,
            data,
        })
    }

    /// Writes the tensor as a BNFT file. Round-trips bit-exactly through
    /// [`Tensor3::read`] up to the f64 -> f32 narrowing done here.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wrap = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let bytes = self.to_bnft_bytes()?;
        let mut out = BufWriter::new(File::create(path).map_err(wrap)?);
        out.write_all(&bytes).map_err(wrap)?;
        out.flush().map_err(wrap)
    }

    /// Encodes the tensor in the BNFT byte layout.
    pub fn to_bnft_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::with_capacity(BNFT_HEADER_LEN + 4 * self.data.len());
        bytes.extend_from_slice(&BNFT_MAGIC);
        bytes.push(BNFT_VERSION);
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for (index, v) in self.data.iter().enumerate() {
            let narrowed = *v as f32;
            if !narrowed.is_finite() {
                return Err(Error::NonFiniteValue { index });
            }
            bytes.extend_from_slice(&narrowed.to_le_bytes());
        }
        Ok(bytes)
    }
}

fn checked_len(h: u64, w: u64, c: u64) -> Result<usize> {
    let overflow = || Error::DimensionOverflow {
        height: h,
        width: w,
        channels: c,
    };
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::InvalidDimensions(format!(
            "zero-sized tensor {}x{}x{}",
            h, w, c
        )));
    }
    let len = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(overflow)?;
    // Payload must address 4*len bytes and the in-memory buffer 8*len.
    if len > u64::MAX / 8 || usize::try_from(len).is_err() {
        return Err(overflow());
    }
    Ok(len as usize)
}
