//! Training-pair synthesis: photometric jitter, then a sampled homography.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{warp_map, GrayImage, Homography, RgbImage};

/// Which network the pairs are for; descriptor pairs carry no rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Detector,
    Descriptor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Max corner offset as a fraction of image width/height.
    pub corner_jitter: f64,
    pub rot_range_deg: (f64, f64),
    pub scale_range: (f64, f64),
    /// Multiplicative contrast range about the image mean.
    pub contrast: (f32, f32),
    /// Additive brightness, drawn from `[-b, b]`.
    pub brightness: f32,
    /// Hue shift in degrees, drawn from `[-h, h]`; RGB input only.
    pub hue_deg: f32,
}

impl AugmentConfig {
    pub fn detector() -> Self {
        AugmentConfig {
            corner_jitter: 0.15,
            rot_range_deg: (-90.0, 90.0),
            scale_range: (0.85, 1.15),
            contrast: (0.7, 1.3),
            brightness: 0.1,
            hue_deg: 15.0,
        }
    }

    pub fn descriptor() -> Self {
        AugmentConfig {
            rot_range_deg: (0.0, 0.0),
            ..Self::detector()
        }
    }

    /// No geometric or photometric change at all.
    pub fn identity() -> Self {
        AugmentConfig {
            corner_jitter: 0.0,
            rot_range_deg: (0.0, 0.0),
            scale_range: (1.0, 1.0),
            contrast: (1.0, 1.0),
            brightness: 0.0,
            hue_deg: 0.0,
        }
    }

    pub fn validate(&self, purpose: Purpose) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=0.3).contains(&self.corner_jitter) {
            return bad(format!("corner_jitter {} outside [0, 0.3]", self.corner_jitter));
        }
        let (rlo, rhi) = self.rot_range_deg;
        if !(rlo <= rhi && rlo >= -180.0 && rhi <= 180.0) {
            return bad(format!("rotation range ({rlo}, {rhi}) must be ordered within [-180, 180]"));
        }
        if purpose == Purpose::Descriptor && (rlo != 0.0 || rhi != 0.0) {
            return bad(format!("descriptor pairs take no rotation, got range ({rlo}, {rhi})"));
        }
        let (slo, shi) = self.scale_range;
        if !(slo <= shi && slo > 0.5 && shi < 2.0) {
            return bad(format!("scale range ({slo}, {shi}) must be ordered within (0.5, 2)"));
        }
        let (clo, chi) = self.contrast;
        if !(clo <= chi && clo > 0.0) {
            return bad(format!("contrast range ({clo}, {chi}) must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.brightness) {
            return bad(format!("brightness {} outside [0, 1]", self.brightness));
        }
        if !(0.0..=180.0).contains(&self.hue_deg) {
            return bad(format!("hue shift {} outside [0, 180]", self.hue_deg));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    // always one draw, so an empty range does not shift later samples
    let t: f64 = rng.gen();
    lo + (hi - lo) * t
}

/// One concrete photometric change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Photometric {
    pub contrast: f32,
    pub brightness: f32,
    pub hue: f32,
}

/// Draws the photometric change for `seed`.
pub fn draw_photometric(cfg: &AugmentConfig, seed: u64) -> Photometric {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contrast = uniform(&mut rng, cfg.contrast.0 as f64, cfg.contrast.1 as f64) as f32;
    let b = cfg.brightness as f64;
    let brightness = uniform(&mut rng, -b, b) as f32;
    let h = cfg.hue_deg as f64;
    let hue = uniform(&mut rng, -h, h) as f32;
    Photometric {
        contrast,
        brightness,
        hue,
    }
}

fn adjust(v: f32, mean: f32, p: &Photometric) -> f32 {
    // offset form keeps the neutral setting exact
    (v * p.contrast + (mean * (1.0 - p.contrast) + p.brightness)).clamp(0.0, 1.0)
}

/// Contrast about the mean plus brightness offset, clamped to `[0, 1]`.
pub fn apply_photometric(img: &GrayImage, p: &Photometric) -> GrayImage {
    let mean = img.plane().mean() as f32;
    GrayImage::from_plane_clamped(img.plane().map(|v| adjust(v, mean, p)))
}

pub fn photometric_jitter(img: &GrayImage, cfg: &AugmentConfig, seed: u64) -> GrayImage {
    apply_photometric(img, &draw_photometric(cfg, seed))
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max <= 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// HSV jitter: hue rotation, contrast and brightness on the value channel.
pub fn jitter_rgb(img: &RgbImage, cfg: &AugmentConfig, seed: u64) -> RgbImage {
    let p = draw_photometric(cfg, seed);
    let hsv: Vec<[f32; 3]> = img.data.iter().map(|&c| rgb_to_hsv(c)).collect();
    let mean = if hsv.is_empty() {
        0.0
    } else {
        (hsv.iter().map(|c| c[2] as f64).sum::<f64>() / hsv.len() as f64) as f32
    };
    let data = hsv
        .into_iter()
        .map(|[h, s, v]| {
            let [r, g, b] = hsv_to_rgb([h + p.hue, s, adjust(v, mean, &p)]);
            [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]
        })
        .collect();
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

fn is_convex(q: &[(f64, f64); 4]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross.abs() < 1e-9 || (sign != 0.0 && cross.signum() != sign) {
            return false;
        }
        sign = cross.signum();
    }
    true
}

const MAX_ATTEMPTS: usize = 10;

/// `S * R * P`: corner perturbation, then rotation and scaling about the centre.
pub fn random_homography(width: usize, height: usize, cfg: &AugmentConfig, seed: u64) -> Result<Homography> {
    if width < 2 || height < 2 {
        return Err(Error::ImageTooSmall { width, height, min: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let (jx, jy) = (cfg.corner_jitter * width as f64, cfg.corner_jitter * height as f64);
    let mut perspective = None;
    for _ in 0..MAX_ATTEMPTS {
        let mut moved = corners;
        for c in moved.iter_mut() {
            c.0 += uniform(&mut rng, -jx, jx);
            c.1 += uniform(&mut rng, -jy, jy);
        }
        if !is_convex(&moved) {
            continue;
        }
        perspective = Some(if cfg.corner_jitter == 0.0 {
            Homography::identity()
        } else {
            Homography::from_correspondences(corners, moved)?
        });
        break;
    }
    let perspective = perspective.ok_or_else(|| {
        Error::Degenerate(format!("no convex corner perturbation in {MAX_ATTEMPTS} attempts"))
    })?;
    let angle = uniform(&mut rng, cfg.rot_range_deg.0, cfg.rot_range_deg.1).to_radians();
    let scale = uniform(&mut rng, cfg.scale_range.0, cfg.scale_range.1);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let rotation = Homography::rotation_about(angle, cx, cy);
    let scaling = Homography::scale_about(scale, cx, cy);
    scaling.after(&rotation.after(&perspective)?)
}

/// Original view, transformed view and the homography between them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub original: GrayImage,
    pub transformed: GrayImage,
    /// Maps original coordinates to transformed coordinates.
    pub homography: Homography,
}

/// Seeds for the three random draws of one pair.
fn sub_seeds(seed: u64) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [rng.gen(), rng.gen(), rng.gen()]
}

/// Jitters two copies independently and warps the second by a sampled homography.
pub fn make_training_pair(img: &GrayImage, cfg: &AugmentConfig, purpose: Purpose, seed: u64) -> Result<TrainingPair> {
    cfg.validate(purpose)?;
    let [s_orig, s_trans, s_geom] = sub_seeds(seed);
    let homography = random_homography(img.width(), img.height(), cfg, s_geom)?;
    let original = photometric_jitter(img, cfg, s_orig);
    let second = photometric_jitter(img, cfg, s_trans);
    let warped = warp_map(second.plane(), &homography, img.width(), img.height())?;
    Ok(TrainingPair {
        original,
        transformed: GrayImage::from_plane_clamped(warped.values),
        homography,
    })
}
