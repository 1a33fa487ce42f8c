//! Grayscale images in unit range with binary PGM (P5) reading and writing.
//!
//! PGM is the interchange format for rendered samples: trivially diffable,
//! viewable everywhere, and byte-exact to regenerate.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad image: {0}")]
    Invalid(String),
    #[error("malformed pgm: {0}")]
    MalformedPgm(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major grayscale image with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(&bad) = pixels
            .iter()
            .find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::Invalid(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, col: usize, row: usize) -> f64 {
        assert!(col < self.width && row < self.height, "pixel out of range");
        self.pixels[row * self.width + col]
    }
}

/// Writes an image as binary PGM, quantizing each value to 8 bits.
pub fn write_pgm<W: Write>(image: &GrayImage, mut sink: W) -> Result<(), ImageError> {
    write!(sink, "P5\n{} {}\n255\n", image.width, image.height)?;
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    sink.write_all(&bytes)?;
    Ok(())
}

fn is_pgm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Reads one header token, skipping whitespace and `#` comments.
fn next_token(bytes: &[u8], mut pos: usize) -> Result<(usize, usize), ImageError> {
    loop {
        while pos < bytes.len() && is_pgm_space(bytes[pos]) {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        break;
    }
    let start = pos;
    while pos < bytes.len() && !is_pgm_space(bytes[pos]) && bytes[pos] != b'#' {
        pos += 1;
    }
    if start == pos {
        return Err(ImageError::MalformedPgm("unexpected end of header".into()));
    }
    Ok((start, pos))
}

fn header_number(bytes: &[u8], pos: usize) -> Result<(usize, usize), ImageError> {
    let (start, end) = next_token(bytes, pos)?;
    let text = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| ImageError::MalformedPgm("non-ascii header".into()))?;
    let value: usize = text
        .parse()
        .map_err(|_| ImageError::MalformedPgm(format!("bad header number {text:?}")))?;
    Ok((value, end))
}

/// Parses a binary PGM file produced by [`write_pgm`] or any other 8-bit
/// P5 writer. The raster must fill the declared size exactly.
pub fn read_pgm<R: Read>(mut source: R) -> Result<GrayImage, ImageError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let (start, end) = next_token(&bytes, 0)?;
    if &bytes[start..end] != b"P5" {
        return Err(ImageError::MalformedPgm(
            "not a binary pgm (missing P5)".into(),
        ));
    }
    let (width, pos) = header_number(&bytes, end)?;
    let (height, pos) = header_number(&bytes, pos)?;
    let (maxval, pos) = header_number(&bytes, pos)?;
    if maxval != 255 {
        return Err(ImageError::MalformedPgm(format!(
            "unsupported maxval {maxval}, expected 255"
        )));
    }
    if pos >= bytes.len() || !is_pgm_space(bytes[pos]) {
        return Err(ImageError::MalformedPgm(
            "missing whitespace before raster".into(),
        ));
    }
    let raster = &bytes[pos + 1..];
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| ImageError::MalformedPgm("image size overflow".into()))?;
    if raster.len() < expected {
        return Err(ImageError::MalformedPgm(format!(
            "raster has {} bytes, expected {expected}",
            raster.len()
        )));
    }
    if raster.len() > expected {
        return Err(ImageError::MalformedPgm(
            "trailing bytes after raster".into(),
        ));
    }
    let pixels = raster.iter().map(|&b| b as f64 / 255.0).collect();
    GrayImage::new(width, height, pixels)
}
