//! File formats: PGM images and masks, `CDLM` matrix files, INI configuration,
//! and dictionary manifests.

pub mod config;
pub mod manifest;
pub mod matrix_file;
pub mod pgm;

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::ImagePlane;

pub use config::Config;
pub use manifest::{load_dictionaries, save_dictionaries, DictionaryManifest};

/// Output container selected from a file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Matrix,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "pgm" | "pnm" => Ok(ImageFormat::Pgm),
            "cdlm" | "mat" => Ok(ImageFormat::Matrix),
            _ => Err(Error::arg(format!(
                "cannot infer image format of {} (use .pgm or .cdlm)",
                path.display()
            ))),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes an image from PGM (P2/P5) or `CDLM` bytes, sniffing the magic.
pub fn decode_image(bytes: &[u8]) -> Result<ImagePlane> {
    if matrix_file::is_matrix_file(bytes) {
        let m = matrix_file::decode(bytes)?;
        return plane_from_matrix(&m);
    }
    Ok(pgm::decode(bytes)?.to_plane())
}

pub fn read_image(path: &Path) -> Result<ImagePlane> {
    decode_image(&read_bytes(path)?)
}

/// Writes P5 (clamped, rounded half-up) or a lossless matrix file, by extension.
pub fn write_image(img: &ImagePlane, path: &Path) -> Result<()> {
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Pgm => pgm::encode_p5(img),
        ImageFormat::Matrix => matrix_file::encode(&matrix_from_plane(img)),
    };
    write_bytes(path, &bytes)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    matrix_file::decode(&read_bytes(path)?)
}

pub fn write_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_bytes(path, &matrix_file::encode(m))
}

pub fn matrix_from_plane(img: &ImagePlane) -> DMatrix<f64> {
    DMatrix::from_row_slice(img.height(), img.width(), img.pixels())
}

pub fn plane_from_matrix(m: &DMatrix<f64>) -> Result<ImagePlane> {
    let mut pixels = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            pixels.push(m[(r, c)]);
        }
    }
    ImagePlane::new(m.nrows(), m.ncols(), pixels)
}

/// Binary validity matrix: 1 marks a usable pixel, 0 a crack.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    entries: DMatrix<f64>,
}

impl MaskMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::arg(format!(
                "mask entries must be 0 or 1, found {bad}"
            )));
        }
        Ok(Self { entries })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            entries: DMatrix::from_element(rows, cols, 1.0),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut valid: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            entries: DMatrix::from_fn(rows, cols, |r, c| if valid(r, c) { 1.0 } else { 0.0 }),
        }
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.entries[(row, col)] != 0.0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn all_valid(&self) -> bool {
        self.entries.iter().all(|&v| v != 0.0)
    }
}

pub fn decode_mask(bytes: &[u8]) -> Result<MaskMatrix> {
    if matrix_file::is_matrix_file(bytes) {
        return Err(Error::format(0, "masks must be PGM files"));
    }
    let raster = pgm::decode(bytes)?;
    Ok(MaskMatrix::from_fn(raster.height, raster.width, |r, c| {
        raster.samples[r * raster.width + c] != 0
    }))
}

/// Reads a crack mask: pixel 0 is a crack (entry 0), anything else is valid.
pub fn read_mask(path: &Path) -> Result<MaskMatrix> {
    decode_mask(&read_bytes(path)?)
}
