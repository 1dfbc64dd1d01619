//! Training loops for both networks, checkpoints and the resolved config.
//!
//! Each step draws `batch` samples from a stream keyed by `(seed, step)`, so a
//! resumed run sees exactly the samples the uninterrupted run would have.
//! Samples run in parallel; their gradients are summed in slot order, which
//! keeps results bitwise independent of the thread count.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, NetworkId, OptimizerState};
pub use config::{DatasetSpec, Sampling, Stage, TrainConfig};

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{make_training_pair, Purpose};
use crate::descriptor::{
    descriptor_batch_loss_var, map_candidates, random_points, select_candidates, DesNet, DesNetConfig,
};
use crate::detector::{DetectConfig, SobelNet, SobelNetConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, synth_benchmark, BenchmarkMode, EvalConfig, Summary};
use crate::gauss::{cross_warp_loss_var, LossBreakdown, ScaleLoss};
use crate::image::{sobel_magnitude, GrayImage};
use crate::tensor::{Graph, Optimizer, Tensor};

/// Share of skipped descriptor samples above which a run is flagged.
pub const EMPTY_CANDIDATE_WARN: f64 = 0.1;

const DETECTOR_STREAM: u64 = 0xde7e_c70a;
const DESCRIPTOR_STREAM: u64 = 0xde5c_0001;
const EVAL_STREAM: u64 = 0x0e7a_1000;

/// Loads or generates the training images.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<GrayImage>> {
    match spec {
        DatasetSpec::Synthetic { count, size } => crate::synth::synth_dataset(*count, *size, *size, seed),
        DatasetSpec::Directory(dir) => {
            let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            let mut paths: Vec<_> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
                    matches!(ext.as_str(), "pgm" | "ppm" | "png")
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::format(dir, "no .pgm/.ppm/.png images found"));
            }
            paths
                .iter()
                .map(|p| {
                    let img = crate::image::io::read_gray(p)?;
                    img.ensure_min_side(crate::synth::SYNTH_MIN_SIDE)
                        .map_err(|e| Error::format(p, e.to_string()))?;
                    Ok(img)
                })
                .collect()
        }
    }
}

/// Per-step loss summary.
#[derive(Clone, Debug, PartialEq)]
pub enum StepLoss {
    /// Batch-mean components; `|R1|`, `|R2|` are summed over the batch.
    Detector(LossBreakdown),
    /// `None` when every sample in the step was skipped.
    Descriptor { loss: Option<f64>, used: usize, skipped: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub loss: StepLoss,
    pub wall_ms: f64,
}

impl StepRecord {
    /// Total loss, if the step had any samples.
    pub fn total(&self) -> Option<f64> {
        match &self.loss {
            StepLoss::Detector(b) => Some(b.total),
            StepLoss::Descriptor { loss, .. } => *loss,
        }
    }

    pub fn csv_header(&self) -> String {
        match &self.loss {
            StepLoss::Detector(b) => format!("step,{},wall_ms", b.csv_header()),
            StepLoss::Descriptor { .. } => "step,total,used,skipped,wall_ms".into(),
        }
    }

    pub fn csv_line(&self) -> String {
        match &self.loss {
            StepLoss::Detector(b) => format!("{},{},{:.3}", self.step, b.csv_values(), self.wall_ms),
            StepLoss::Descriptor { loss, used, skipped } => format!(
                "{},{},{used},{skipped},{:.3}",
                self.step,
                loss.map(|l| format!("{l:.8}")).unwrap_or_default(),
                self.wall_ms
            ),
        }
    }
}

/// Progress notifications passed to the caller's monitor.
#[derive(Debug)]
pub enum Event<'a> {
    Step(&'a StepRecord),
    Eval { step: u64, summary: &'a Summary },
    Warning(&'a str),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<StepRecord>,
    pub evals: Vec<(u64, Summary)>,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let Some(first) = self.records.first() else { return String::new() };
        let mut s = first.csv_header();
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.log_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `(image index, pair seed)` for every slot of a step.
fn step_samples(stream: u64, seed: u64, step: u64, batch: usize, n_images: usize) -> Vec<(usize, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream);
    rng.set_stream(step);
    (0..batch).map(|_| (rng.gen_range(0..n_images), rng.gen())).collect()
}

fn add_into(acc: &mut [Tensor], grads: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += *y;
        }
    }
}

fn scale(grads: &mut [Tensor], s: f32) {
    for g in grads {
        g.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

/// Gradient of a loss built from two copies of the same parameter list.
fn tied_grads(g: &Graph, loss: crate::tensor::Var, a: &[crate::tensor::Var], b: &[crate::tensor::Var]) -> Result<Vec<Tensor>> {
    let grads = g.backward(loss)?;
    Ok(a.iter()
        .zip(b)
        .map(|(&va, &vb)| {
            let shape = g.value(va).shape().to_vec();
            let mut t = grads.get(va).cloned().unwrap_or_else(|| Tensor::zeros(shape));
            if let Some(gb) = grads.get(vb) {
                add_into(std::slice::from_mut(&mut t), std::slice::from_ref(gb));
            }
            t
        })
        .collect())
}

fn abort(step: u64, detail: impl Into<String>) -> Error {
    Error::NumericAbort {
        step,
        detail: detail.into(),
    }
}

fn numeric_to_abort(step: u64, e: Error) -> Error {
    if e.is_numeric() {
        abort(step, e.to_string())
    } else {
        e
    }
}

fn resume_state(cfg: &TrainConfig, resume: Option<&Checkpoint>, id: NetworkId) -> Result<(u64, Optimizer)> {
    let Some(ck) = resume else { return Ok((0, Optimizer::new(cfg.optimizer))) };
    if ck.network != id {
        return Err(crate::error::CheckpointError::WrongNetwork {
            expected: id.name(),
            found: ck.network.name().into(),
        }
        .into());
    }
    if ck.config_hash != cfg.hash() {
        return Err(Error::Config(format!(
            "checkpoint was trained with a different config (hash {:08x}, current {:08x})",
            ck.config_hash,
            cfg.hash()
        )));
    }
    let opt = match &ck.optimizer {
        Some(state) => state.restore()?,
        None => Optimizer::new(cfg.optimizer),
    };
    Ok((ck.step, opt))
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let scales: Vec<ScaleLoss> = (0..parts[0].scales.len())
        .map(|k| ScaleLoss {
            radius: parts[0].scales[k].radius,
            osp: parts.iter().map(|p| p.scales[k].osp).sum::<f64>() / n,
            tsp: parts.iter().map(|p| p.scales[k].tsp).sum::<f64>() / n,
            active_orig: parts.iter().map(|p| p.scales[k].active_orig).sum(),
            active_trans: parts.iter().map(|p| p.scales[k].active_trans).sum(),
        })
        .collect();
    let total = scales.iter().map(|s| s.osp + s.tsp).sum();
    LossBreakdown { total, scales }
}

fn detector_sample(net: &SobelNet, img: &GrayImage, cfg: &TrainConfig, seed: u64) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let pair = make_training_pair(img, &cfg.augment, Purpose::Detector, seed)?;
    let mut g = Graph::new();
    let vo = net.build(&mut g, &pair.original, true)?;
    let vt = net.build(&mut g, &pair.transformed, true)?;
    let so = sobel_magnitude(&pair.original);
    let st = sobel_magnitude(&pair.transformed);
    let (loss, breakdown) = cross_warp_loss_var(&mut g, vo.score, vt.score, &pair.homography, &so, &st, &cfg.cross_warp)?;
    let grads = tied_grads(&g, loss, &vo.params, &vt.params)?;
    Ok((breakdown, grads))
}

fn held_out(cfg: &TrainConfig, images: &[GrayImage]) -> Result<Vec<crate::eval::EvalPair>> {
    let size = images[0].width().min(images[0].height());
    synth_benchmark(cfg.eval_pairs.max(1), size, BenchmarkMode::Viewpoint, cfg.seed ^ EVAL_STREAM)
}

fn eval_config() -> EvalConfig {
    EvalConfig {
        detect: DetectConfig::default(),
        ..EvalConfig::default()
    }
}

/// Trains SobelNet on cross-warped Gaussian losses; `init` seeds a fresh
/// network, `resume` continues a saved run.
pub fn train_detector(
    cfg: &TrainConfig,
    images: &[GrayImage],
    resume: Option<&Checkpoint>,
    monitor: &mut dyn FnMut(Event<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one image".into()));
    }
    let mut net = match resume {
        Some(ck) => ck.sobelnet()?,
        None => SobelNet::new_random(SobelNetConfig::default(), cfg.seed),
    };
    let (start, mut opt) = resume_state(cfg, resume, NetworkId::SobelNet)?;
    let bench = if cfg.eval_every > 0 { held_out(cfg, images)? } else { Vec::new() };
    let (mut records, mut evals) = (Vec::new(), Vec::new());
    for step in start..cfg.steps {
        let t0 = Instant::now();
        let samples = step_samples(DETECTOR_STREAM, cfg.seed, step, cfg.batch, images.len());
        let results: Vec<Result<(LossBreakdown, Vec<Tensor>)>> = samples
            .par_iter()
            .map(|&(idx, seed)| detector_sample(&net, &images[idx], cfg, seed))
            .collect();
        let mut parts = Vec::with_capacity(results.len());
        let mut acc: Option<Vec<Tensor>> = None;
        for r in results {
            let (b, grads) = r.map_err(|e| numeric_to_abort(step + 1, e))?;
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => add_into(a, &grads),
            }
            parts.push(b);
        }
        let mut grads = acc.expect("batch >= 1");
        scale(&mut grads, 1.0 / cfg.batch as f32);
        let breakdown = mean_breakdown(&parts);
        if !breakdown.total.is_finite() || !grads.iter().all(Tensor::is_finite) {
            return Err(abort(
                step + 1,
                format!("non-finite loss or gradient; components {}", breakdown.csv_values()),
            ));
        }
        opt.step(net.params_mut().tensors_mut(), &grads)?;
        if !net.params().all_finite() {
            return Err(abort(step + 1, "parameters became non-finite"));
        }
        let rec = StepRecord {
            step: step + 1,
            loss: StepLoss::Detector(breakdown),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        monitor(Event::Step(&rec));
        records.push(rec);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let s = evaluate(&net, None, &bench, &eval_config())?.overall();
            monitor(Event::Eval { step: step + 1, summary: &s });
            evals.push((step + 1, s));
        }
    }
    let checkpoint = Checkpoint::from_sobelnet(&net, cfg.steps.max(start), cfg.hash(), Some(OptimizerState::capture(&opt)));
    Ok(TrainOutcome {
        checkpoint,
        records,
        evals,
        warnings: Vec::new(),
    })
}

type DescriptorSample = Option<(f64, Vec<Tensor>)>;

fn descriptor_sample(
    desnet: &DesNet,
    detector: &SobelNet,
    img: &GrayImage,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<DescriptorSample> {
    let pair = make_training_pair(img, &cfg.augment, Purpose::Descriptor, seed)?;
    let (w, h) = (pair.original.width(), pair.original.height());
    let cand_seed = seed.rotate_left(29) ^ 0x9e37_79b9;
    let cands = match cfg.sampling {
        Sampling::Candidates => select_candidates(&detector.score_map(&pair.original)?, &cfg.candidates, cand_seed)?,
        Sampling::Random => random_points(w, h, &cfg.candidates, cand_seed)?,
    };
    let pairs = map_candidates(&cands, &pair.homography, w, h);
    if pairs.first.len() < 2 {
        return Ok(None);
    }
    let mut g = Graph::new();
    let v1 = desnet.build(&mut g, &pair.original, true)?;
    let v2 = desnet.build(&mut g, &pair.transformed, true)?;
    let loss = descriptor_batch_loss_var(&mut g, v1.descriptors, v2.descriptors, &pairs, &cfg.circle)?;
    let value = g.value(loss).data()[0] as f64;
    Ok(Some((value, tied_grads(&g, loss, &v1.params, &v2.params)?)))
}

/// Trains DesNet against a frozen detector. Samples with fewer than two
/// usable candidates are skipped.
pub fn train_descriptor(
    cfg: &TrainConfig,
    images: &[GrayImage],
    detector: &SobelNet,
    resume: Option<&Checkpoint>,
    monitor: &mut dyn FnMut(Event<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one image".into()));
    }
    let mut net = match resume {
        Some(ck) => ck.desnet()?,
        None => DesNet::new_random(DesNetConfig::default(), cfg.seed)?,
    };
    let (start, mut opt) = resume_state(cfg, resume, NetworkId::DesNet)?;
    let bench = if cfg.eval_every > 0 { held_out(cfg, images)? } else { Vec::new() };
    let (mut records, mut evals) = (Vec::new(), Vec::new());
    let (mut skipped_total, mut seen_total) = (0usize, 0usize);
    for step in start..cfg.steps {
        let t0 = Instant::now();
        let samples = step_samples(DESCRIPTOR_STREAM, cfg.seed, step, cfg.batch, images.len());
        let results: Vec<Result<DescriptorSample>> = samples
            .par_iter()
            .map(|&(idx, seed)| descriptor_sample(&net, detector, &images[idx], cfg, seed))
            .collect();
        let (mut used, mut skipped, mut loss_sum) = (0usize, 0usize, 0.0f64);
        let mut acc: Option<Vec<Tensor>> = None;
        for r in results {
            match r.map_err(|e| numeric_to_abort(step + 1, e))? {
                None => skipped += 1,
                Some((l, grads)) => {
                    used += 1;
                    loss_sum += l;
                    match &mut acc {
                        None => acc = Some(grads),
                        Some(a) => add_into(a, &grads),
                    }
                }
            }
        }
        skipped_total += skipped;
        seen_total += samples.len();
        let loss = acc.map(|mut grads| {
            scale(&mut grads, 1.0 / used as f32);
            (loss_sum / used as f64, grads)
        });
        let total = match loss {
            Some((l, grads)) => {
                if !l.is_finite() || !grads.iter().all(Tensor::is_finite) {
                    return Err(abort(step + 1, format!("non-finite circle loss {l} over {used} samples")));
                }
                opt.step(net.params_mut().tensors_mut(), &grads)?;
                Some(l)
            }
            None => None,
        };
        let rec = StepRecord {
            step: step + 1,
            loss: StepLoss::Descriptor { loss: total, used, skipped },
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        monitor(Event::Step(&rec));
        records.push(rec);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let s = evaluate(detector, Some(&net), &bench, &eval_config())?.overall();
            monitor(Event::Eval { step: step + 1, summary: &s });
            evals.push((step + 1, s));
        }
    }
    let mut warnings = Vec::new();
    if seen_total > 0 && skipped_total as f64 > EMPTY_CANDIDATE_WARN * seen_total as f64 {
        let w = format!(
            "{skipped_total} of {seen_total} samples had fewer than 2 usable candidates (degenerate data or detector)"
        );
        monitor(Event::Warning(&w));
        warnings.push(w);
    }
    let checkpoint = Checkpoint::from_desnet(&net, cfg.steps.max(start), cfg.hash(), Some(OptimizerState::capture(&opt)));
    Ok(TrainOutcome {
        checkpoint,
        records,
        evals,
        warnings,
    })
}
