//! SobelNet keypoint detector: score map, thresholding, NMS, keypoint files.

mod keypoints;
mod nms;
mod sobelnet;

pub use keypoints::{Keypoint, KeypointSet};
pub use nms::local_maxima;
pub use sobelnet::{SobelNet, SobelNetConfig, SobelNetVars};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Plane};

/// Normalised score map, same size as the input image.
pub type ScoreMap = Plane;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectConfig {
    /// Scores below `ratio * max` are discarded before NMS.
    pub ratio: f32,
    pub nms_radius: usize,
    pub max_kpts: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            ratio: 0.1,
            nms_radius: 7,
            max_kpts: 5000,
        }
    }
}

impl DetectConfig {
    /// Radius used for the HPatches-style protocol.
    pub const HPATCHES_NMS_RADIUS: usize = 15;
    /// Radius used for the FM-Bench-style protocol.
    pub const FMBENCH_NMS_RADIUS: usize = 3;
}

/// Zeroes every value below `ratio * max(map)`.
pub fn threshold_scores(map: &ScoreMap, ratio: f32) -> Result<ScoreMap> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("threshold ratio {ratio} outside [0, 1)")));
    }
    let cut = ratio * map.max().max(0.0);
    Ok(map.map(|v| if v < cut { 0.0 } else { v }))
}

/// Strict local maxima within a `(2r+1)^2` window, best score first.
pub fn nms(map: &ScoreMap, radius: usize) -> Result<KeypointSet> {
    if radius == 0 {
        return Err(Error::InvalidArgument("NMS radius must be at least 1".into()));
    }
    let points = local_maxima(map, radius)
        .into_iter()
        .map(|(x, y, score)| Keypoint {
            x: x as f32,
            y: y as f32,
            score,
        })
        .collect();
    Ok(KeypointSet::new(map.width(), map.height(), points))
}

/// Threshold, NMS and cap applied to an existing score map.
pub fn keypoints_from_scores(map: &ScoreMap, config: &DetectConfig) -> Result<KeypointSet> {
    let thresholded = threshold_scores(map, config.ratio)?;
    let mut set = nms(&thresholded, config.nms_radius)?;
    set.truncate(config.max_kpts);
    Ok(set)
}

/// Full detector: forward pass, threshold, NMS, top-`max_kpts`.
pub fn detect(img: &GrayImage, net: &SobelNet, config: &DetectConfig) -> Result<KeypointSet> {
    if config.max_kpts == 0 {
        img.ensure_min_side(crate::image::PYRAMID_MIN_SIDE)?;
        return Ok(KeypointSet::empty(img.width(), img.height()));
    }
    let map = net.score_map(img)?;
    keypoints_from_scores(&map, config)
}
