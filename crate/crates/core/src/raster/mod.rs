//! Grayscale segmentation images: rendering, noise injection, PGM I/O.

mod noise;
mod pgm;

pub use noise::{inject_noise, inject_noise_fraction, NoiseLevel, NoiseSpec};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm, PgmError};

use crate::geom::{Dihedral, Point2, RoadGraph};
use crate::Real;

pub const DEFAULT_SIZE: usize = 64;
pub const DEFAULT_HALF_WIDTH: f64 = 1.5;

/// Row-major grayscale image with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, pixels: vec![0.0; width * height] }
    }

    /// Wraps raw pixels, clamping values into `[0, 1]`.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert_eq!(pixels.len(), width * height, "pixel count must equal width * height");
        let pixels = pixels.into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }).collect();
        Self { width, height, pixels }
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

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v.clamp(0.0, 1.0);
    }

    pub fn count_set(&self) -> usize {
        self.pixels.iter().filter(|&&v| v > 0.0).count()
    }

    /// Applies a symmetry of the square to a square image.
    pub fn transform(&self, d: Dihedral) -> Self {
        assert_eq!(self.width, self.height, "dihedral transforms need a square image");
        let n = self.width;
        let mut out = Self::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let (r2, c2) = d.apply_pixel(r, c, n);
                out.pixels[r2 * n + c2] = self.pixels[r * n + c];
            }
        }
        out
    }
}

/// Center of pixel `i` along an axis of `size` pixels, in `[-1, 1]` units.
pub fn pixel_center<T: Real>(i: usize, size: usize) -> T {
    T::from_usize(2 * i + 1).unwrap() / T::from_usize(size).unwrap() - T::one()
}

/// Distance-field rendering of the graph's edges.
///
/// A pixel is 1 iff its center lies within `half_width` pixels of some edge.
/// Pixel centers sit on a grid symmetric about the origin, so the result
/// commutes exactly with [`GrayImage::transform`].
pub fn rasterize<T: Real>(g: &RoadGraph<T>, size: usize, half_width: T) -> GrayImage {
    assert!(half_width > T::zero(), "half width must be positive");
    let mut img = GrayImage::zeros(size, size);
    let radius = half_width * T::two() / T::from_usize(size).unwrap();
    let radius_sq = radius * radius;
    let segs: Vec<_> = g.segments().collect();
    if segs.is_empty() {
        return img;
    }
    let centers: Vec<T> = (0..size).map(|i| pixel_center(i, size)).collect();
    for (r, &y) in centers.iter().enumerate() {
        for (c, &x) in centers.iter().enumerate() {
            let p = Point2::new(x, y);
            if segs.iter().any(|s| s.dist_sq_to(p) <= radius_sq) {
                img.pixels[r * size + c] = 1.0;
            }
        }
    }
    img
}
