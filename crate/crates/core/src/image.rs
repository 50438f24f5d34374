//! Fixed-size grayscale raster shared by the renderer, the models and the search.

use serde::{Deserialize, Serialize};

pub const IMAGE_SIDE: usize = 64;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// 64×64 row-major grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pixels: Vec<f32>,
}

impl Image {
    /// Uniform image with every pixel set to `value` (clamped).
    pub fn filled(value: f32) -> Self {
        Self {
            pixels: vec![value.clamp(0.0, 1.0); IMAGE_PIXELS],
        }
    }

    pub fn zeros() -> Self {
        Self::filled(0.0)
    }

    /// Builds an image from raw values, clamping into `[0, 1]`.
    ///
    /// Non-finite values map to 0. Returns `None` when the length is not 64×64.
    pub fn from_pixels(mut pixels: Vec<f32>) -> Option<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return None;
        }
        for p in &mut pixels {
            *p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        }
        Some(Self { pixels })
    }

    pub const fn width(&self) -> usize {
        IMAGE_SIDE
    }

    pub const fn height(&self) -> usize {
        IMAGE_SIDE
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * IMAGE_SIDE + col] = value.clamp(0.0, 1.0);
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.pixels[row * IMAGE_SIDE..(row + 1) * IMAGE_SIDE]
    }

    /// Mean absolute per-pixel difference.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        let total: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| f64::from((a - b).abs()))
            .sum();
        total / IMAGE_PIXELS as f64
    }

    /// Euclidean distance between two images.
    pub fn l2_distance(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| {
                let d = f64::from(a - b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_pixels_rejects_wrong_length() {
        assert!(Image::from_pixels(vec![0.0; 10]).is_none());
    }

    #[test]
    fn from_pixels_clamps() {
        let mut raw = vec![0.5; IMAGE_PIXELS];
        raw[0] = -1.0;
        raw[1] = 2.0;
        raw[2] = f32::NAN;
        let img = Image::from_pixels(raw).unwrap();
        assert_eq!(img.pixels()[0], 0.0);
        assert_eq!(img.pixels()[1], 1.0);
        assert_eq!(img.pixels()[2], 0.0);
    }
}
