//! Grayscale raster used by every pipeline stage.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Row-major grayscale plane of real-valued pixels.
///
/// Sources are nominally in `[0, 255]`, but intermediate planes (pyramid
/// bands, separated textures) may hold any finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::arg(format!(
                "pixel buffer holds {} values, expected {}x{}={}",
                pixels.len(),
                height,
                width,
                height * width
            )));
        }
        if let Some(pos) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::arg(format!("non-finite pixel at index {pos}")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Pixel lookup with edge replication outside the raster.
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.pixels[r * self.width + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::arg(format!(
                "image dimensions differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn energy(&self) -> f64 {
        self.pixels.iter().map(|p| p * p).sum()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

impl Index<(usize, usize)> for ImagePlane {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.pixels[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for ImagePlane {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.pixels[r * self.width + c]
    }
}

impl Add for &ImagePlane {
    type Output = ImagePlane;

    fn add(self, rhs: &ImagePlane) -> ImagePlane {
        assert_eq!(self.dims(), rhs.dims(), "image dimensions differ");
        self.zip_map(rhs, |a, b| a + b).expect("checked dims")
    }
}

impl Sub for &ImagePlane {
    type Output = ImagePlane;

    fn sub(self, rhs: &ImagePlane) -> ImagePlane {
        assert_eq!(self.dims(), rhs.dims(), "image dimensions differ");
        self.zip_map(rhs, |a, b| a - b).expect("checked dims")
    }
}

impl Mul<f64> for &ImagePlane {
    type Output = ImagePlane;

    fn mul(self, rhs: f64) -> ImagePlane {
        self.map(|p| p * rhs)
    }
}
