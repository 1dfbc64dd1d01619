use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DescriptorMap;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::layers::{check_params, init_params, ConvSpec, LayerMults};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Smallest image side DesNet accepts.
pub const DESNET_MIN_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct DesNetConfig {
    /// Output width of each conv layer; the last entry is the descriptor size.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub slope: f32,
}

impl Default for DesNetConfig {
    fn default() -> Self {
        DesNetConfig {
            widths: vec![16, 16, 32, 32],
            kernel: 3,
            slope: 0.1,
        }
    }
}

impl DesNetConfig {
    pub fn dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("DesNet widths must be a non-empty list of positive sizes".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("DesNet kernel must be odd, got {}", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Config(format!("activation slope {} outside [0, 1)", self.slope)));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<ConvSpec> {
        let mut cin = 1;
        self.widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let spec = ConvSpec::new(format!("conv{}", i + 1), cin, cout, self.kernel);
                cin = cout;
                spec
            })
            .collect()
    }
}

pub struct DesNetVars {
    /// `[1, D, H, W]` unit-norm descriptors.
    pub descriptors: Var,
    pub params: Vec<Var>,
}

/// Full-resolution conv stack on the raw grayscale image, L2-normalised per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DesNet {
    config: DesNetConfig,
    params: ParamStore,
}

impl DesNet {
    pub fn new_random(config: DesNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config.layers(), &mut rng);
        Ok(DesNet { config, params })
    }

    pub fn from_params(config: DesNetConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_params(&config.layers(), &params)?;
        Ok(DesNet { config, params })
    }

    /// Recovers layer widths and kernel size from stored parameter shapes.
    pub fn infer_config(params: &ParamStore, slope: f32) -> Result<DesNetConfig> {
        let mut widths = Vec::new();
        let mut kernel = None;
        for i in 1.. {
            let Some(w) = params.get(&format!("conv{i}.weight")) else { break };
            match w.shape() {
                &[cout, _, k, k2] if k == k2 => {
                    widths.push(cout);
                    kernel.get_or_insert(k);
                }
                other => return Err(Error::InvalidArgument(format!("unexpected conv{i}.weight shape {other:?}"))),
            }
        }
        let kernel = kernel.ok_or_else(|| Error::InvalidArgument("missing `conv1.weight`".into()))?;
        let config = DesNetConfig { widths, kernel, slope };
        config.validate()?;
        Ok(config)
    }

    pub fn config(&self) -> &DesNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn build(&self, g: &mut Graph, img: &GrayImage, trainable: bool) -> Result<DesNetVars> {
        img.ensure_min_side(DESNET_MIN_SIDE)?;
        let params: Vec<Var> = self.params.tensors().map(|t| g.leaf(t.clone(), trainable)).collect();
        let specs = self.config.layers();
        let input = Tensor::from_plane(img.height(), img.width(), img.pixels().to_vec())?;
        let mut x = g.constant(input);
        for (i, spec) in specs.iter().enumerate() {
            x = g.conv2d(x, params[2 * i], params[2 * i + 1], 1, spec.padding())?;
            if i + 1 < specs.len() {
                x = g.leaky(x, self.config.slope)?;
            }
        }
        let descriptors = g.channel_normalize(x)?;
        Ok(DesNetVars { descriptors, params })
    }

    pub fn descriptor_map(&self, img: &GrayImage) -> Result<DescriptorMap> {
        let mut g = Graph::new();
        let vars = self.build(&mut g, img, false)?;
        DescriptorMap::from_tensor(g.value(vars.descriptors))
    }

    pub fn multiplication_breakdown(config: &DesNetConfig, width: usize, height: usize) -> Vec<LayerMults> {
        let px = (width * height) as u64;
        config
            .layers()
            .into_iter()
            .map(|s| LayerMults {
                mults: s.mults_per_pixel() * px,
                layer: s.name,
                pixels: px,
            })
            .collect()
    }

    pub fn count_multiplications(config: &DesNetConfig, width: usize, height: usize) -> u64 {
        Self::multiplication_breakdown(config, width, height)
            .iter()
            .map(|l| l.mults)
            .sum()
    }
}
