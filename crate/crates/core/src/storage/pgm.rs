//! Portable GrayMap codec (P2 ASCII and P5 binary, 8- and 16-bit).

use std::io::Write;

use crate::error::{Error, Result};
use crate::image::ImagePlane;

const SIXTEEN_BIT_SCALE: f64 = 255.0 / 65535.0;

/// Raw PGM samples before any rescaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmRaster {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub samples: Vec<u32>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse::<u32>()
            .map_err(|_| Error::format(start, format!("{what} out of range")))
    }
}

/// Parses a PGM byte stream into raw samples.
pub fn decode(bytes: &[u8]) -> Result<PgmRaster> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::format(0, "missing PGM magic number"));
    }
    let binary = match bytes[1] {
        b'5' => true,
        b'2' => false,
        _ => {
            return Err(Error::format(
                1,
                "unsupported magic number (expected P2 or P5)",
            ))
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.read_uint("width")? as usize;
    let height = cur.read_uint("height")? as usize;
    cur.skip_whitespace_and_comments();
    let maxval_offset = cur.pos;
    let maxval = cur.read_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(maxval_offset, "zero image dimension"));
    }
    let wide = match maxval {
        1..=255 => false,
        65535 => true,
        _ => {
            return Err(Error::format(
                maxval_offset,
                format!("unsupported maxval {maxval}"),
            ))
        }
    };
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(0, "image dimensions overflow"))?;

    let mut samples = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(Error::format(cur.pos, "missing whitespace after maxval"));
        }
        cur.pos += 1;
        let bytes_per_sample = if wide { 2 } else { 1 };
        let needed = count * bytes_per_sample;
        let available = bytes.len() - cur.pos;
        if available < needed {
            return Err(Error::format(
                bytes.len(),
                format!("truncated raster: {available} of {needed} payload bytes"),
            ));
        }
        let raster = &bytes[cur.pos..cur.pos + needed];
        for (i, chunk) in raster.chunks_exact(bytes_per_sample).enumerate() {
            let value = if wide {
                u32::from(u16::from_be_bytes([chunk[0], chunk[1]]))
            } else {
                u32::from(chunk[0])
            };
            if value > maxval {
                return Err(Error::format(
                    cur.pos + i * bytes_per_sample,
                    format!("sample {value} exceeds maxval {maxval}"),
                ));
            }
            samples.push(value);
        }
    } else {
        for _ in 0..count {
            cur.skip_whitespace_and_comments();
            let offset = cur.pos;
            if offset >= bytes.len() {
                return Err(Error::format(
                    offset,
                    format!("truncated raster: {} of {count} samples", samples.len()),
                ));
            }
            let value = cur.read_uint("sample")?;
            if value > maxval {
                return Err(Error::format(
                    offset,
                    format!("sample {value} exceeds maxval {maxval}"),
                ));
            }
            samples.push(value);
        }
    }
    Ok(PgmRaster {
        width,
        height,
        maxval,
        samples,
    })
}

impl PgmRaster {
    /// Converts samples to reals; 16-bit data is brought into the 8-bit range.
    pub fn to_plane(&self) -> ImagePlane {
        let scale = if self.maxval > 255 {
            SIXTEEN_BIT_SCALE
        } else {
            1.0
        };
        let pixels = self.samples.iter().map(|&s| f64::from(s) * scale).collect();
        ImagePlane::new(self.height, self.width, pixels).expect("decoded raster is consistent")
    }
}

/// Clamps to `[0, 255]` and rounds half-up.
pub fn quantize(value: f64) -> u8 {
    (value.clamp(0.0, 255.0) + 0.5).floor() as u8
}

/// Encodes a plane as 8-bit binary P5.
pub fn encode_p5(img: &ImagePlane) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels().len() + 32);
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height()).expect("write to vec");
    out.extend(img.pixels().iter().map(|&p| quantize(p)));
    out
}
