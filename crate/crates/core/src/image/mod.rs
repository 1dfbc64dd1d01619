//! Classical image processing: grids, Sobel, blur, pyramid, homographies, warping.

mod filters;
mod homography;
pub mod io;
mod pyramid;
mod warp;

pub use filters::{gaussian_blur, gaussian_blur_plane, sobel_magnitude};
pub use homography::Homography;
pub use pyramid::{build_pyramid, pyramid_sizes, Pyramid, PYRAMID_MIN_SIDE, PYRAMID_SCALES};
pub use warp::{warp_map, Warped};

use crate::error::{Error, Result};

/// Row-major 2-D float grid (score maps, edge maps, intermediate planes).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Sobel gradient magnitude; always nonnegative.
pub type EdgeMap = Plane;

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "plane",
                format!("{width}x{height} needs {} values, got {}", width * height, data.len()),
            ));
        }
        Ok(Plane { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Replicate-border read.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rotates 90 degrees counter-clockwise: `out(y, W-1-x) = in(x, y)`.
    pub fn rot90(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let mut out = Plane::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                out.set(y, w - 1 - x, self.get(x, y));
            }
        }
        out
    }

    pub fn same_size(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Binary grid (edge masks, corner maps, validity masks).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("binary map", format!("{width}x{height} vs {} cells", data.len())));
        }
        Ok(BinaryMap { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BinaryMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Elementwise product (logical and).
    pub fn and(&self, other: &BinaryMap) -> Result<BinaryMap> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape("binary and", "grid sizes differ"));
        }
        Ok(BinaryMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// Linear indices of the set cells in row-major order.
    pub fn ones(&self) -> Vec<usize> {
        self.data.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    plane: Plane,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        Self::from_plane(Plane::new(width, height, pixels)?)
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        if let Some(bad) = plane.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(GrayImage { plane })
    }

    /// Clamps every value into `[0, 1]` (NaN becomes 0).
    pub fn from_plane_clamped(plane: Plane) -> Self {
        GrayImage {
            plane: plane.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }),
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::from_plane_clamped(Plane::filled(width, height, value))
    }

    pub fn width(&self) -> usize {
        self.plane.width
    }

    pub fn height(&self) -> usize {
        self.plane.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.plane.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.plane.get(x, y)
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn into_plane(self) -> Plane {
        self.plane
    }

    pub fn min_side(&self) -> usize {
        self.width().min(self.height())
    }

    pub fn ensure_min_side(&self, min: usize) -> Result<()> {
        if self.min_side() < min {
            return Err(Error::ImageTooSmall {
                width: self.width(),
                height: self.height(),
                min,
            });
        }
        Ok(())
    }

    /// CRC32 of the raw pixel bits, handy for determinism checks.
    pub fn content_hash(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.width() as u64).to_le_bytes());
        h.update(&(self.height() as u64).to_le_bytes());
        for v in self.pixels() {
            h.update(&v.to_bits().to_le_bytes());
        }
        h.finalize()
    }
}

/// Interleaved RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    /// Luma conversion with weights 0.299 / 0.587 / 0.114.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .iter()
            .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        GrayImage::from_plane_clamped(Plane {
            width: self.width,
            height: self.height,
            data,
        })
    }
}
