use super::{gaussian_blur, GrayImage, Plane};
use crate::error::Result;
use crate::tensor::resample::resize_plane;

/// Downscale factors of the three pyramid levels.
pub const PYRAMID_SCALES: [f64; 3] = [1.0, std::f64::consts::SQRT_2, 2.0];

/// Smallest image side the pyramid (and the detector) accepts.
pub const PYRAMID_MIN_SIDE: usize = 32;

/// Blur sigma per unit of downscale factor.
const SIGMA_PER_SCALE: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub levels: [GrayImage; 3],
}

/// `(width, height)` of each level, rounded to the nearest integer.
pub fn pyramid_sizes(width: usize, height: usize) -> [(usize, usize); 3] {
    PYRAMID_SCALES.map(|s| {
        (
            ((width as f64 / s).round() as usize).max(1),
            ((height as f64 / s).round() as usize).max(1),
        )
    })
}

pub(crate) fn resize_image(img: &GrayImage, w: usize, h: usize) -> GrayImage {
    let mut out = vec![0.0f32; w * h];
    resize_plane(img.pixels(), img.height(), img.width(), h, w, &mut out);
    GrayImage::from_plane_clamped(Plane::new(w, h, out).expect("sized buffer"))
}

/// Levels at scales 1, 1/sqrt(2), 1/2. Each downscaled level is blurred with
/// `sigma = 0.8 * factor` before bilinear resampling; level 0 is the input.
pub fn build_pyramid(img: &GrayImage) -> Result<Pyramid> {
    img.ensure_min_side(PYRAMID_MIN_SIDE)?;
    let sizes = pyramid_sizes(img.width(), img.height());
    let down = |i: usize| -> Result<GrayImage> {
        let blurred = gaussian_blur(img, SIGMA_PER_SCALE * PYRAMID_SCALES[i])?;
        Ok(resize_image(&blurred, sizes[i].0, sizes[i].1))
    };
    Ok(Pyramid {
        levels: [img.clone(), down(1)?, down(2)?],
    })
}
