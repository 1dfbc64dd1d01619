use super::{EdgeMap, GrayImage, Plane};
use crate::error::{Error, Result};

/// Per-pixel `sqrt(gx^2 + gy^2)` with the 3x3 Sobel kernels
/// `gx = [-1 0 1; -2 0 2; -1 0 1]`, `gy = gx^T`, replicate borders.
pub fn sobel_magnitude(img: &GrayImage) -> EdgeMap {
    sobel_plane(img.plane())
}

pub(crate) fn sobel_plane(p: &Plane) -> Plane {
    let (w, h) = (p.width(), p.height());
    let mut out = Plane::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let at = |dx: isize, dy: isize| p.get_clamped(x + dx, y + dy);
            let gx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
            let gy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
            out.set(x as usize, y as usize, (gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Normalised 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub(crate) fn gaussian_taps(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    // a convex combination of [0,1] values stays in [0,1] up to rounding
    Ok(GrayImage::from_plane_clamped(gaussian_blur_plane(img.plane(), sigma)?))
}

/// Separable Gaussian blur with replicate borders.
pub fn gaussian_blur_plane(p: &Plane, sigma: f64) -> Result<Plane> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = (p.width(), p.height());
    let mut tmp = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, &t) in taps.iter().enumerate() {
                acc += t as f64 * p.get_clamped(x as isize + i as isize - r, y as isize) as f64;
            }
            tmp.set(x, y, acc as f32);
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, &t) in taps.iter().enumerate() {
                acc += t as f64 * tmp.get_clamped(x as isize, y as isize + i as isize - r) as f64;
            }
            out.set(x, y, acc as f32);
        }
    }
    Ok(out)
}
