//! Binary PGM (P5) codec for [`Image`].
//!
//! Writing always emits `P5\n64 64\n255\n` followed by one byte per pixel,
//! quantized as `floor(v * 255 + 0.5)`. Reading accepts comments and any
//! whitespace between header fields, with maxval up to 255.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::image::{Image, IMAGE_PIXELS, IMAGE_SIDE};

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("not a binary PGM: expected magic P5")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    Header(&'static str),
    #[error("unsupported PGM size {width}x{height}, expected 64x64")]
    Size { width: usize, height: usize },
    #[error("unsupported PGM maxval {0}, expected 1..=255")]
    MaxVal(usize),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Quantizes one pixel value to a byte, rounding half up.
#[inline]
pub fn quantize(v: f32) -> u8 {
    let scaled = (f64::from(v.clamp(0.0, 1.0)) * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

/// Encodes a grayscale raster of arbitrary size.
pub fn encode_raw(width: usize, height: usize, pixels: &[f32]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(pixels.iter().map(|&v| quantize(v)));
    out
}

pub fn encode(image: &Image) -> Vec<u8> {
    encode_raw(image.width(), image.height(), image.pixels())
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<usize, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::Header(what));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PgmError::Header(what))
    }
}

/// Decodes a P5 byte stream into a raster of any size.
pub fn decode_raw(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::MaxVal(maxval));
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(PgmError::Header("missing separator after maxval")),
    }
    let expected = width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let scale = maxval as f32;
    let pixels = payload[..expected]
        .iter()
        .map(|&b| (f32::from(b) / scale).min(1.0))
        .collect();
    Ok((width, height, pixels))
}

pub fn decode(bytes: &[u8]) -> Result<Image, PgmError> {
    let (width, height, pixels) = decode_raw(bytes)?;
    if width != IMAGE_SIDE || height != IMAGE_SIDE {
        return Err(PgmError::Size { width, height });
    }
    debug_assert_eq!(pixels.len(), IMAGE_PIXELS);
    Ok(Image::from_pixels(pixels).expect("size checked"))
}

pub fn write(path: &Path, image: &Image) -> Result<(), PgmError> {
    fs::write(path, encode(image)).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_raw(path: &Path, width: usize, height: usize, pixels: &[f32]) -> Result<(), PgmError> {
    fs::write(path, encode_raw(width, height, pixels)).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read(path: &Path) -> Result<Image, PgmError> {
    let bytes = fs::read(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
