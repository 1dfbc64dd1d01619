use std::fmt::Write as _;
use std::path::PathBuf;

use crate::augment::AugmentConfig;
use crate::descriptor::{CandidateConfig, CircleParams};
use crate::error::{Error, Result};
use crate::gauss::CrossWarpConfig;
use crate::tensor::{OptimizerConfig, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Detector,
    Descriptor,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Detector => "detector",
            Stage::Descriptor => "descriptor",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synthetic { count: usize, size: usize },
    /// Every `.pgm`, `.ppm` (and `.png` with the `png` feature) file in a directory.
    Directory(PathBuf),
}

/// Where descriptor training takes its point pairs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Spaced maxima of the frozen detector's score map.
    Candidates,
    /// Uniformly random spaced points (ablation).
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub dataset: DatasetSpec,
    pub steps: u64,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    /// Held-out evaluation period in steps; 0 disables it.
    pub eval_every: u64,
    pub eval_pairs: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub cross_warp: CrossWarpConfig,
    /// Frozen detector checkpoint, required by the descriptor stage.
    pub detector: Option<PathBuf>,
    pub sampling: Sampling,
    pub candidates: CandidateConfig,
    pub circle: CircleParams,
}

impl TrainConfig {
    pub fn detector() -> Self {
        TrainConfig {
            stage: Stage::Detector,
            dataset: DatasetSpec::Synthetic { count: 256, size: 128 },
            steps: 2000,
            batch: 8,
            optimizer: OptimizerConfig::adam(1e-3),
            eval_every: 0,
            eval_pairs: 8,
            seed: 0,
            augment: AugmentConfig::detector(),
            cross_warp: CrossWarpConfig::default(),
            detector: None,
            sampling: Sampling::Candidates,
            candidates: CandidateConfig::default(),
            circle: CircleParams::default(),
        }
    }

    pub fn descriptor() -> Self {
        TrainConfig {
            stage: Stage::Descriptor,
            optimizer: OptimizerConfig::adam(3e-4),
            augment: AugmentConfig::descriptor(),
            ..Self::detector()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Detector => Self::detector(),
            Stage::Descriptor => Self::descriptor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return bad(format!("lr must be a non-negative number, got {}", self.optimizer.lr));
        }
        if let DatasetSpec::Synthetic { count, size } = self.dataset {
            if count == 0 || size < crate::synth::SYNTH_MIN_SIDE {
                return bad(format!(
                    "synthetic dataset needs count >= 1 and size >= {}, got {count} x {size}",
                    crate::synth::SYNTH_MIN_SIDE
                ));
            }
        }
        if self.cross_warp.radii.is_empty() || self.cross_warp.radii.contains(&0) {
            return bad("radii must be a non-empty list of positive integers".into());
        }
        let cw = &self.cross_warp;
        if !(cw.eps > 0.0 && cw.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", cw.eps));
        }
        if !(0.0..=1.0).contains(&cw.alpha) {
            return bad(format!("edge_alpha must lie in [0, 1], got {}", cw.alpha));
        }
        if !(self.circle.gamma > 0.0 && self.circle.gamma.is_finite()) || !(self.circle.margin >= 0.0) {
            return bad(format!(
                "circle loss needs gamma > 0 and margin >= 0, got gamma {} margin {}",
                self.circle.gamma, self.circle.margin
            ));
        }
        if self.candidates.count < 2 {
            return bad("cand_count must be at least 2".into());
        }
        let purpose = match self.stage {
            Stage::Detector => crate::augment::Purpose::Detector,
            Stage::Descriptor => crate::augment::Purpose::Descriptor,
        };
        self.augment.validate(purpose)
    }

    /// Resolved `key=value` lines, parseable by [`apply`](Self::apply).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.augment;
        let o = &self.optimizer;
        let (dataset, count, size) = match &self.dataset {
            DatasetSpec::Synthetic { count, size } => ("synthetic".to_string(), *count, *size),
            DatasetSpec::Directory(p) => (p.display().to_string(), 0, 0),
        };
        let radii: Vec<String> = self.cross_warp.radii.iter().map(|r| r.to_string()).collect();
        let mut e = vec![
            ("stage", self.stage.name().to_string()),
            ("dataset", dataset),
        ];
        if count > 0 {
            e.push(("synth_count", count.to_string()));
            e.push(("synth_size", size.to_string()));
        }
        e.extend([
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("optimizer", o.kind.to_string()),
            ("lr", o.lr.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("adam_eps", o.eps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_pairs", self.eval_pairs.to_string()),
            ("seed", self.seed.to_string()),
            ("corner_jitter", a.corner_jitter.to_string()),
            ("rot_min", a.rot_range_deg.0.to_string()),
            ("rot_max", a.rot_range_deg.1.to_string()),
            ("scale_min", a.scale_range.0.to_string()),
            ("scale_max", a.scale_range.1.to_string()),
            ("contrast_min", a.contrast.0.to_string()),
            ("contrast_max", a.contrast.1.to_string()),
            ("brightness", a.brightness.to_string()),
            ("hue", a.hue_deg.to_string()),
            ("radii", radii.join(",")),
            ("edge_alpha", self.cross_warp.alpha.to_string()),
            ("eps", self.cross_warp.eps.to_string()),
            (
                "corner_nms",
                self.cross_warp.nms_radius.map(|r| r.to_string()).unwrap_or_else(|| "auto".into()),
            ),
        ]);
        if let Some(d) = &self.detector {
            e.push(("detector", d.display().to_string()));
        }
        e.extend([
            (
                "sampling",
                match self.sampling {
                    Sampling::Candidates => "candidates",
                    Sampling::Random => "random",
                }
                .to_string(),
            ),
            ("cand_count", self.candidates.count.to_string()),
            ("cand_min_dist", self.candidates.min_dist.to_string()),
            ("cand_alpha", self.candidates.alpha.to_string()),
            ("margin", self.circle.margin.to_string()),
            ("gamma", self.circle.gamma.to_string()),
        ]);
        e
    }

    /// Keys that change what a run computes; `steps` and reporting knobs are left
    /// out so a run can be resumed with a larger step budget.
    pub fn hash(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (k, v) in self.entries() {
            if matches!(k, "steps" | "eval_every" | "eval_pairs" | "detector") {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize()
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let a = &mut self.augment;
        match key.trim() {
            "stage" => {
                let stage = match v {
                    "detector" => Stage::Detector,
                    "descriptor" => Stage::Descriptor,
                    _ => return Err(Error::Config(format!("stage must be detector|descriptor, got `{v}`"))),
                };
                if stage != self.stage {
                    return Err(Error::Config(format!(
                        "config is for the {} stage, got stage={v}",
                        self.stage.name()
                    )));
                }
            }
            "dataset" => {
                self.dataset = if v == "synthetic" {
                    match self.dataset {
                        DatasetSpec::Synthetic { .. } => self.dataset.clone(),
                        DatasetSpec::Directory(_) => DatasetSpec::Synthetic { count: 256, size: 128 },
                    }
                } else {
                    DatasetSpec::Directory(PathBuf::from(v))
                }
            }
            "synth_count" | "synth_size" => {
                let n: usize = num(key, v)?;
                let DatasetSpec::Synthetic { count, size } = &mut self.dataset else {
                    return Err(Error::Config(format!("`{key}` needs dataset=synthetic")));
                };
                if key == "synth_count" {
                    *count = n;
                } else {
                    *size = n;
                }
            }
            "steps" => self.steps = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "optimizer" => self.optimizer.kind = v.parse::<OptimizerKind>()?,
            "lr" => self.optimizer.lr = num(key, v)?,
            "beta1" => self.optimizer.beta1 = num(key, v)?,
            "beta2" => self.optimizer.beta2 = num(key, v)?,
            "adam_eps" => self.optimizer.eps = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "eval_pairs" => self.eval_pairs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "corner_jitter" => a.corner_jitter = num(key, v)?,
            "rot_min" => a.rot_range_deg.0 = num(key, v)?,
            "rot_max" => a.rot_range_deg.1 = num(key, v)?,
            "scale_min" => a.scale_range.0 = num(key, v)?,
            "scale_max" => a.scale_range.1 = num(key, v)?,
            "contrast_min" => a.contrast.0 = num(key, v)?,
            "contrast_max" => a.contrast.1 = num(key, v)?,
            "brightness" => a.brightness = num(key, v)?,
            "hue" => a.hue_deg = num(key, v)?,
            "radii" => {
                self.cross_warp.radii = v
                    .split(',')
                    .map(|r| num::<usize>(key, r))
                    .collect::<Result<Vec<_>>>()?
            }
            "edge_alpha" => self.cross_warp.alpha = num(key, v)?,
            "eps" => self.cross_warp.eps = num(key, v)?,
            "corner_nms" => {
                self.cross_warp.nms_radius = if v == "auto" { None } else { Some(num(key, v)?) }
            }
            "detector" => self.detector = Some(PathBuf::from(v)),
            "sampling" => {
                self.sampling = match v {
                    "candidates" => Sampling::Candidates,
                    "random" => Sampling::Random,
                    _ => return Err(Error::Config(format!("sampling must be candidates|random, got `{v}`"))),
                }
            }
            "cand_count" => self.candidates.count = num(key, v)?,
            "cand_min_dist" => self.candidates.min_dist = num(key, v)?,
            "cand_alpha" => self.candidates.alpha = num(key, v)?,
            "margin" => self.circle.margin = num(key, v)?,
            "gamma" => self.circle.gamma = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}
