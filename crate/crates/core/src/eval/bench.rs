use std::fmt;

use crate::augment::{photometric_jitter, random_homography, AugmentConfig};
use crate::error::{Error, Result};
use crate::image::{warp_map, GrayImage, Homography};
use crate::synth::synth_image;

/// Kind of change between the two images of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairKind {
    /// Sampled homography, no photometric change.
    Viewpoint,
    /// Identity geometry, photometric jitter on the second image.
    Illumination,
    /// The same image twice.
    Identity,
}

impl PairKind {
    pub fn name(self) -> &'static str {
        match self {
            PairKind::Viewpoint => "viewpoint",
            PairKind::Illumination => "illumination",
            PairKind::Identity => "identity",
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Two views of a scene and the homography from A to B.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub a: GrayImage,
    pub b: GrayImage,
    pub homography: Homography,
    pub kind: PairKind,
}

impl EvalPair {
    pub fn new(a: GrayImage, b: GrayImage, homography: Homography, kind: PairKind) -> Result<Self> {
        for img in [&a, &b] {
            img.ensure_min_side(crate::image::PYRAMID_MIN_SIDE)?;
        }
        Homography::new(*homography.matrix())?;
        Ok(EvalPair { a, b, homography, kind })
    }

    /// `(A, A, I)`.
    pub fn identity(img: GrayImage) -> Self {
        EvalPair {
            b: img.clone(),
            a: img,
            homography: Homography::identity(),
            kind: PairKind::Identity,
        }
    }

    /// The same pair seen from B: `(B, A, H^-1)`.
    pub fn swapped(&self) -> Self {
        EvalPair {
            a: self.b.clone(),
            b: self.a.clone(),
            homography: self.homography.inverse(),
            kind: self.kind,
        }
    }
}

/// Which kinds a benchmark draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchmarkMode {
    Viewpoint,
    Illumination,
    /// Alternates viewpoint and illumination, starting with viewpoint.
    Mixed,
    Identity,
}

/// Benchmark images come from their own stream so they never coincide with
/// training images drawn from the same seed.
const BENCH_SALT: u64 = 0x5eed_be4c_0000_0001;

/// Deterministic synthetic pairs of `size x size` images.
pub fn synth_benchmark(n_pairs: usize, size: usize, mode: BenchmarkMode, seed: u64) -> Result<Vec<EvalPair>> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one pair".into()));
    }
    let geometric = AugmentConfig {
        contrast: (1.0, 1.0),
        brightness: 0.0,
        hue_deg: 0.0,
        ..AugmentConfig::detector()
    };
    let photometric = AugmentConfig {
        corner_jitter: 0.0,
        rot_range_deg: (0.0, 0.0),
        scale_range: (1.0, 1.0),
        ..AugmentConfig::detector()
    };
    (0..n_pairs as u64)
        .map(|i| {
            let img = synth_image(size, size, seed ^ BENCH_SALT, i)?;
            let kind = match mode {
                BenchmarkMode::Viewpoint => PairKind::Viewpoint,
                BenchmarkMode::Illumination => PairKind::Illumination,
                BenchmarkMode::Identity => PairKind::Identity,
                BenchmarkMode::Mixed if i % 2 == 0 => PairKind::Viewpoint,
                BenchmarkMode::Mixed => PairKind::Illumination,
            };
            let pair_seed = crate::synth::image_seed(seed ^ BENCH_SALT, i).rotate_left(17);
            Ok(match kind {
                PairKind::Viewpoint => {
                    let h = random_homography(size, size, &geometric, pair_seed)?;
                    let b = GrayImage::from_plane_clamped(warp_map(img.plane(), &h, size, size)?.values);
                    EvalPair {
                        a: img,
                        b,
                        homography: h,
                        kind,
                    }
                }
                PairKind::Illumination => EvalPair {
                    b: photometric_jitter(&img, &photometric, pair_seed),
                    a: img,
                    homography: Homography::identity(),
                    kind,
                },
                PairKind::Identity => EvalPair::identity(img),
            })
        })
        .collect()
}
