//! Repeatability, matching score and MMA over image pairs with known homographies.
//!
//! Report CSV (one row per pair, then one `mean` row per subset):
//!
//! ```text
//! # sobelkey eval v1
//! # <key>=<value> ...                    resolved configuration
//! pair,kind,kpts_a,kpts_b,kpts,possible,correct,rep,ms,mma
//! ```
//!
//! `kpts_a`/`kpts_b` count shared-view keypoints, `kpts` is their mean and the
//! three metrics are percentages. Without descriptors `correct`, `ms` and
//! `mma` are left empty.

mod bench;
mod io;
mod metrics;

pub use bench::{synth_benchmark, BenchmarkMode, EvalPair, PairKind};
pub use io::{homography_to_text, load_pair_dir, parse_homography, write_pair_dir, MatchList};
pub use metrics::{
    correct_matches, matching_score_and_mma, mutual_nn_match, pair_distance, possible_matches, repeatability,
    shared_view_filter, Assignment, Match, SharedView,
};

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::descriptor::{sample_descriptors, DesNet, DescriptorSet};
use crate::detector::{detect, DetectConfig, KeypointSet, SobelNet};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Homography};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub detect: DetectConfig,
    /// Correspondence tolerance in pixels.
    pub tol: f64,
    pub assignment: Assignment,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            detect: DetectConfig {
                nms_radius: DetectConfig::HPATCHES_NMS_RADIUS,
                ..DetectConfig::default()
            },
            tol: 5.0,
            assignment: Assignment::Optimal,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.detect.nms_radius == 0 {
            return Err(Error::Config("nms_radius must be at least 1".into()));
        }
        Ok(())
    }

    /// `key=value` pairs echoed into every report.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("tol".into(), self.tol.to_string()),
            ("nms_radius".into(), self.detect.nms_radius.to_string()),
            ("max_kpts".into(), self.detect.max_kpts.to_string()),
            ("ratio".into(), self.detect.ratio.to_string()),
            ("assignment".into(), self.assignment.name().into()),
            ("matcher".into(), "mutual-nn".into()),
        ]
    }
}

/// Keypoints of one image and, optionally, descriptors aligned with them.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub keypoints: KeypointSet,
    pub descriptors: Option<DescriptorSet>,
}

impl Features {
    pub fn new(keypoints: KeypointSet, descriptors: Option<DescriptorSet>) -> Result<Self> {
        if let Some(d) = &descriptors {
            if d.len() != keypoints.len() {
                return Err(Error::shape(
                    "features",
                    format!("{} keypoints but {} descriptors", keypoints.len(), d.len()),
                ));
            }
        }
        Ok(Features { keypoints, descriptors })
    }

    /// Runs the detector and, if given, the descriptor network on `img`.
    pub fn extract(img: &GrayImage, det: &SobelNet, desc: Option<&DesNet>, cfg: &DetectConfig) -> Result<Self> {
        let keypoints = detect(img, det, cfg)?;
        let descriptors = match desc {
            Some(net) => Some(sample_descriptors(&net.descriptor_map(img)?, &keypoints.coords())?),
            None => None,
        };
        Self::new(keypoints, descriptors)
    }
}

/// Metrics of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRow {
    pub index: usize,
    pub kind: PairKind,
    pub kpts_a: usize,
    pub kpts_b: usize,
    pub possible: usize,
    pub correct: Option<usize>,
    pub rep: f64,
    pub ms: Option<f64>,
    pub mma: Option<f64>,
}

impl PairRow {
    pub fn kpts(&self) -> f64 {
        (self.kpts_a + self.kpts_b) as f64 / 2.0
    }
}

fn subset(d: &DescriptorSet, idx: &[usize]) -> DescriptorSet {
    let points = idx.iter().map(|&i| d.points[i]).collect();
    let data = idx.iter().flat_map(|&i| d.row(i).iter().copied()).collect();
    DescriptorSet {
        dim: d.dim,
        points,
        data,
    }
}

/// Scores precomputed features of A and B under the ground truth `h`.
pub fn score_pair(a: &Features, b: &Features, h: &Homography, kind: PairKind, cfg: &EvalConfig) -> PairRow {
    let (ca, cb) = (a.keypoints.coords(), b.keypoints.coords());
    let sv = shared_view_filter(
        &ca,
        (a.keypoints.width, a.keypoints.height),
        &cb,
        (b.keypoints.width, b.keypoints.height),
        h,
    );
    let pa: Vec<(f32, f32)> = sv.a.iter().map(|&i| ca[i]).collect();
    let pb: Vec<(f32, f32)> = sv.b.iter().map(|&i| cb[i]).collect();
    let possible = possible_matches(&pa, &pb, h, cfg.tol, cfg.assignment).len();
    let min = pa.len().min(pb.len());
    let rep = if min == 0 { 0.0 } else { 100.0 * possible as f64 / min as f64 };
    let mut row = PairRow {
        index: 0,
        kind,
        kpts_a: pa.len(),
        kpts_b: pb.len(),
        possible,
        correct: None,
        rep,
        ms: None,
        mma: None,
    };
    if let (Some(da), Some(db)) = (&a.descriptors, &b.descriptors) {
        let matches = mutual_nn_match(&subset(da, &sv.a), &subset(db, &sv.b));
        let (ms, mma) = matching_score_and_mma(&matches, &pa, &pb, h, cfg.tol, possible);
        row.correct = Some(correct_matches(&matches, &pa, &pb, h, cfg.tol));
        row.ms = Some(ms);
        row.mma = Some(mma);
    }
    row
}

/// Means over a set of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub label: String,
    pub pairs: usize,
    pub rep: f64,
    pub ms: Option<f64>,
    pub mma: Option<f64>,
    pub kpts: f64,
}

fn summarize(label: &str, rows: &[&PairRow]) -> Summary {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&PairRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let described = !rows.is_empty() && rows.iter().all(|r| r.ms.is_some());
    Summary {
        label: label.into(),
        pairs: rows.len(),
        rep: mean(&|r| r.rep),
        ms: described.then(|| mean(&|r| r.ms.unwrap())),
        mma: described.then(|| mean(&|r| r.mma.unwrap())),
        kpts: mean(&|r| r.kpts()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub config: Vec<(String, String)>,
    pub rows: Vec<PairRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl EvalReport {
    /// `overall` first, then one summary per kind present, in order of appearance.
    pub fn summaries(&self) -> Vec<Summary> {
        let all: Vec<&PairRow> = self.rows.iter().collect();
        let mut out = vec![summarize("overall", &all)];
        let mut kinds: Vec<PairKind> = Vec::new();
        for r in &self.rows {
            if !kinds.contains(&r.kind) {
                kinds.push(r.kind);
            }
        }
        if kinds.len() > 1 {
            for k in kinds {
                let rows: Vec<&PairRow> = self.rows.iter().filter(|r| r.kind == k).collect();
                out.push(summarize(k.name(), &rows));
            }
        }
        out
    }

    pub fn overall(&self) -> Summary {
        self.summaries().swap_remove(0)
    }

    fn header(&self) -> String {
        self.config.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# sobelkey eval v1\n");
        let _ = writeln!(s, "# {}", self.header());
        s.push_str("pair,kind,kpts_a,kpts_b,kpts,possible,correct,rep,ms,mma\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.1},{},{},{:.4},{},{}",
                r.index,
                r.kind,
                r.kpts_a,
                r.kpts_b,
                r.kpts(),
                r.possible,
                r.correct.map(|c| c.to_string()).unwrap_or_default(),
                r.rep,
                opt(r.ms),
                opt(r.mma)
            );
        }
        for m in self.summaries() {
            let _ = writeln!(
                s,
                "mean,{},,,{:.1},,,{:.4},{},{}",
                m.label,
                m.kpts,
                m.rep,
                opt(m.ms),
                opt(m.mma)
            );
        }
        s
    }

    /// Aligned table with one line per subset.
    pub fn to_table(&self) -> String {
        let mut s = format!("config: {}\n", self.header());
        let _ = writeln!(s, "{:<14}{:>6}{:>9}{:>9}{:>9}{:>9}", "subset", "pairs", "Rep", "M.S", "MMA", "Kpts");
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        for m in self.summaries() {
            let _ = writeln!(
                s,
                "{:<14}{:>6}{:>9.2}{:>9}{:>9}{:>9.1}",
                m.label,
                m.pairs,
                m.rep,
                cell(m.ms),
                cell(m.mma),
                m.kpts
            );
        }
        s
    }
}

/// Full pipeline on every pair, in parallel; rows keep pair order.
pub fn evaluate(det: &SobelNet, desc: Option<&DesNet>, pairs: &[EvalPair], cfg: &EvalConfig) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one pair".into()));
    }
    cfg.validate()?;
    let rows = pairs
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let fa = Features::extract(&p.a, det, desc, &cfg.detect)?;
            let fb = Features::extract(&p.b, det, desc, &cfg.detect)?;
            let mut row = score_pair(&fa, &fb, &p.homography, p.kind, cfg);
            row.index = index;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut config = cfg.echo();
    config.push(("descriptor".into(), if desc.is_some() { "yes" } else { "no" }.into()));
    Ok(EvalReport { config, rows })
}
