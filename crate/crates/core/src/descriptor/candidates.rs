use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Plane;

/// Candidate training positions in one image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pub points: Vec<(usize, usize)>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn as_f32(&self) -> Vec<(f32, f32)> {
        self.points.iter().map(|&(x, y)| (x as f32, y as f32)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateConfig {
    /// Pool is every pixel scoring above `alpha * max`.
    pub alpha: f32,
    /// Accepted points are strictly farther apart than this.
    pub min_dist: f32,
    pub count: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            alpha: 0.1,
            min_dist: 7.0,
            count: 40,
        }
    }
}

fn greedy_spaced(mut pool: Vec<(usize, usize)>, cfg: &CandidateConfig, seed: u64) -> CandidateSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let limit = (cfg.min_dist as f64).powi(2);
    let mut points: Vec<(usize, usize)> = Vec::with_capacity(cfg.count);
    for (x, y) in pool {
        if points.len() >= cfg.count {
            break;
        }
        let clear = points.iter().all(|&(ax, ay)| {
            let (dx, dy) = (ax as f64 - x as f64, ay as f64 - y as f64);
            dx * dx + dy * dy > limit
        });
        if clear {
            points.push((x, y));
        }
    }
    CandidateSet { points }
}

fn check(cfg: &CandidateConfig) -> Result<()> {
    if !(0.0..1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidArgument(format!("candidate alpha {} outside [0, 1)", cfg.alpha)));
    }
    if !(cfg.min_dist >= 0.0) {
        return Err(Error::InvalidArgument(format!("min_dist {} must be non-negative", cfg.min_dist)));
    }
    Ok(())
}

/// Random high-score positions with a minimum spacing; deterministic in `seed`.
pub fn select_candidates(score: &Plane, cfg: &CandidateConfig, seed: u64) -> Result<CandidateSet> {
    check(cfg)?;
    let cut = cfg.alpha * score.max();
    let w = score.width();
    let pool = score
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cut && v > 0.0)
        .map(|(i, _)| (i % w, i / w))
        .collect();
    Ok(greedy_spaced(pool, cfg, seed))
}

/// Same spacing rule over every pixel, ignoring scores.
pub fn random_points(width: usize, height: usize, cfg: &CandidateConfig, seed: u64) -> Result<CandidateSet> {
    check(cfg)?;
    let pool = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).collect();
    Ok(greedy_spaced(pool, cfg, seed))
}
