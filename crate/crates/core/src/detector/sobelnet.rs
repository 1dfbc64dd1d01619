use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{build_pyramid, sobel_magnitude, GrayImage, Plane, PYRAMID_MIN_SIDE};
use crate::layers::{check_params, init_params, ConvSpec, LayerMults};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Architecture hyper-parameters of the detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobelNetConfig {
    /// Square kernel size of every conv layer.
    pub kernel: usize,
    /// Width of the three per-level conv layers.
    pub channels: usize,
    /// Negative slope of the hidden activations.
    pub slope: f32,
}

impl Default for SobelNetConfig {
    fn default() -> Self {
        SobelNetConfig {
            kernel: 5,
            channels: 8,
            slope: 0.1,
        }
    }
}

impl SobelNetConfig {
    /// conv1..conv3 run on every pyramid level (weights shared); `head` runs once.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let (k, c) = (self.kernel, self.channels);
        vec![
            ConvSpec::new("conv1", 1, c, k),
            ConvSpec::new("conv2", c, c, k),
            ConvSpec::new("conv3", c, c, k),
            ConvSpec::new("head", c, 1, k),
        ]
    }
}

/// Graph handles produced by [`SobelNet::build`].
pub struct SobelNetVars {
    /// `[1, 1, H, W]` max-normalised score map.
    pub score: Var,
    /// One leaf per parameter tensor, in [`ParamStore`] order.
    pub params: Vec<Var>,
}

/// Sobel front-end + shared 3-layer conv stack per pyramid level, summed at
/// full resolution and passed through a final conv, ReLU and max-normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct SobelNet {
    config: SobelNetConfig,
    params: ParamStore,
}

impl SobelNet {
    pub fn new_random(config: SobelNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SobelNet {
            config,
            params: init_params(&config.layers(), &mut rng),
        }
    }

    pub fn from_params(config: SobelNetConfig, params: ParamStore) -> Result<Self> {
        check_params(&config.layers(), &params)?;
        Ok(SobelNet { config, params })
    }

    /// Recovers the architecture from parameter shapes (as stored in checkpoints).
    pub fn infer_config(params: &ParamStore, slope: f32) -> Result<SobelNetConfig> {
        let w = params
            .get("conv1.weight")
            .ok_or_else(|| Error::InvalidArgument("missing `conv1.weight`".into()))?;
        match w.shape() {
            &[c, 1, k, k2] if k == k2 => Ok(SobelNetConfig {
                kernel: k,
                channels: c,
                slope,
            }),
            other => Err(Error::InvalidArgument(format!("unexpected conv1.weight shape {other:?}"))),
        }
    }

    pub fn config(&self) -> &SobelNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Sobel magnitude of each pyramid level as `[1,1,h,w]` tensors.
    pub fn front_end(img: &GrayImage) -> Result<[Tensor; 3]> {
        let pyr = build_pyramid(img)?;
        Ok(pyr.levels.map(|level| {
            let edges = sobel_magnitude(&level);
            let (w, h) = (edges.width(), edges.height());
            Tensor::from_plane(h, w, edges.into_data()).expect("sized")
        }))
    }

    /// Records the forward pass on `g`. Parameters become leaves with
    /// `requires_grad = trainable`.
    pub fn build(&self, g: &mut Graph, img: &GrayImage, trainable: bool) -> Result<SobelNetVars> {
        img.ensure_min_side(PYRAMID_MIN_SIDE)?;
        let levels = Self::front_end(img)?;
        let params: Vec<Var> = self.params.tensors().map(|t| g.leaf(t.clone(), trainable)).collect();
        let specs = self.config.layers();
        let (h, w) = (img.height(), img.width());
        let mut fused: Option<Var> = None;
        for level in levels {
            let mut x = g.constant(level);
            for (i, spec) in specs[..3].iter().enumerate() {
                x = g.conv2d(x, params[2 * i], params[2 * i + 1], 1, spec.padding())?;
                x = g.leaky(x, self.config.slope)?;
            }
            let up = g.resize(x, h, w)?;
            fused = Some(match fused {
                None => up,
                Some(acc) => g.add(acc, up)?,
            });
        }
        let fused = fused.expect("three levels");
        let head = g.conv2d(fused, params[6], params[7], 1, specs[3].padding())?;
        let clamped = g.relu(head)?;
        let score = g.max_normalize(clamped)?;
        Ok(SobelNetVars { score, params })
    }

    /// Dense score map with the same size as `img`.
    pub fn score_map(&self, img: &GrayImage) -> Result<Plane> {
        let mut g = Graph::new();
        let vars = self.build(&mut g, img, false)?;
        Plane::new(img.width(), img.height(), g.value(vars.score).data().to_vec())
    }

    /// Per-layer conv multiplications at `width x height`.
    ///
    /// Pyramid levels are charged their nominal area `W*H/s^2` for
    /// `s in {1, sqrt 2, 2}`; handcrafted filters and resizes are free.
    pub fn multiplication_breakdown(config: &SobelNetConfig, width: usize, height: usize) -> Vec<LayerMults> {
        let area = (width * height) as f64;
        let level_pixels = [area, area / 2.0, area / 4.0].map(|a| a.round() as u64);
        let specs = config.layers();
        let mut out = Vec::new();
        for (li, &px) in level_pixels.iter().enumerate() {
            for spec in &specs[..3] {
                out.push(LayerMults {
                    layer: format!("level{li}.{}", spec.name),
                    pixels: px,
                    mults: spec.mults_per_pixel() * px,
                });
            }
        }
        out.push(LayerMults {
            layer: specs[3].name.clone(),
            pixels: area as u64,
            mults: specs[3].mults_per_pixel() * area as u64,
        });
        out
    }

    pub fn count_multiplications(config: &SobelNetConfig, width: usize, height: usize) -> u64 {
        Self::multiplication_breakdown(config, width, height)
            .iter()
            .map(|l| l.mults)
            .sum()
    }
}
