//! DesNet dense descriptors, sampling, candidate selection and circle loss.

mod candidates;
mod circle;
mod desnet;
mod io;

pub use candidates::{random_points, select_candidates, CandidateConfig, CandidateSet};
pub use circle::{circle_loss, circle_loss_grad, circle_loss_var, similarity_matrix_loss, CircleParams};
pub use desnet::{DesNet, DesNetConfig, DesNetVars, DESNET_MIN_SIDE};
pub use io::DescriptorSet;

use crate::error::{Error, Result};
use crate::image::Homography;
use crate::tensor::resample::point_taps;
use crate::tensor::{Graph, Tensor, Var, NORM_GUARD};

/// Channel-major `[D, H, W]` descriptor volume.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorMap {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f32>,
}

impl DescriptorMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * dim || dim == 0 {
            return Err(Error::shape(
                "descriptor map",
                format!("{width}x{height}x{dim} vs {} values", data.len()),
            ));
        }
        Ok(DescriptorMap {
            width,
            height,
            dim,
            data,
        })
    }

    /// From a `[1, D, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, d, h, w] = t.dims4("descriptor map")?;
        if n != 1 {
            return Err(Error::shape("descriptor map", format!("batch size must be 1, got {n}")));
        }
        Self::new(w, h, d, t.data().to_vec())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Descriptor of pixel `(x, y)`.
    pub fn descriptor(&self, x: usize, y: usize) -> Vec<f32> {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        (0..self.dim).map(|c| self.data[c * plane + i]).collect()
    }

    fn in_bounds(&self, x: f32, y: f32) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f32 && y <= (self.height - 1) as f32
    }

    fn out_of_bounds(&self, x: f32, y: f32) -> Error {
        Error::OutOfBounds {
            x,
            y,
            width: self.width,
            height: self.height,
        }
    }
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if n < NORM_GUARD {
        v.fill(0.0);
        v[0] = 1.0;
    } else {
        for x in v.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

/// Bilinear descriptors at `pts`, renormalised to unit length.
pub fn sample_descriptors(map: &DescriptorMap, pts: &[(f32, f32)]) -> Result<DescriptorSet> {
    let plane = map.width * map.height;
    let mut data = Vec::with_capacity(pts.len() * map.dim);
    for &(x, y) in pts {
        if !map.in_bounds(x, y) {
            return Err(map.out_of_bounds(x, y));
        }
        let taps = point_taps(x, y, map.width, map.height);
        let start = data.len();
        for c in 0..map.dim {
            let ch = &map.data[c * plane..(c + 1) * plane];
            data.push(taps.iter().map(|&(i, w)| ch[i] * w).sum::<f32>());
        }
        normalize(&mut data[start..]);
    }
    DescriptorSet::new(map.dim, pts.to_vec(), data)
}

/// Candidate pairs that survive the mapping into the second image.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPairs {
    pub first: Vec<(f32, f32)>,
    pub second: Vec<(f32, f32)>,
}

/// Maps candidates through `h`, dropping those that leave `width x height`.
pub fn map_candidates(cands: &CandidateSet, h: &Homography, width: usize, height: usize) -> PointPairs {
    let mut pairs = PointPairs {
        first: Vec::new(),
        second: Vec::new(),
    };
    for &(x, y) in &cands.points {
        let Some((u, v)) = h.apply(x as f64, y as f64) else { continue };
        if u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64 {
            pairs.first.push((x as f32, y as f32));
            pairs.second.push((u as f32, v as f32));
        }
    }
    pairs
}

fn require_pairs(pairs: &PointPairs) -> Result<()> {
    if pairs.first.len() < 2 {
        return Err(Error::Degenerate(format!(
            "{} candidate(s) survive the warp, at least 2 are needed",
            pairs.first.len()
        )));
    }
    Ok(())
}

/// Mean per-candidate circle loss; the other candidates act as negatives.
pub fn descriptor_batch_loss(
    d1: &DescriptorMap,
    d2: &DescriptorMap,
    cands: &CandidateSet,
    h: &Homography,
    params: &CircleParams,
) -> Result<f64> {
    let pairs = map_candidates(cands, h, d2.width, d2.height);
    require_pairs(&pairs)?;
    let a = sample_descriptors(d1, &pairs.first)?;
    let b = sample_descriptors(d2, &pairs.second)?;
    let n = a.len();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = a.row(i).iter().zip(b.row(j)).map(|(x, y)| *x as f64 * *y as f64).sum();
        }
    }
    Ok(similarity_matrix_loss(&sim, n, params)?.0)
}

/// Graph version of [`descriptor_batch_loss`] on `[1, D, H, W]` descriptor variables.
pub fn descriptor_batch_loss_var(g: &mut Graph, d1: Var, d2: Var, pairs: &PointPairs, params: &CircleParams) -> Result<Var> {
    require_pairs(pairs)?;
    let a = g.sample_points(d1, &pairs.first)?;
    let a = g.channel_normalize(a)?;
    let b = g.sample_points(d2, &pairs.second)?;
    let b = g.channel_normalize(b)?;
    let sim = g.matmul_t(a, b)?;
    circle_loss_var(g, sim, params)
}
