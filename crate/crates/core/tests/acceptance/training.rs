//! Desk-scale training runs on synthetic data and their held-out checks.
//!
//! Both runs use batch 1 to fit the time budget; everything else is the
//! stage default. The trained detector is kept for the descriptor stage.

use std::sync::OnceLock;

use sobelkey::descriptor::{sample_descriptors, DesNet, DesNetConfig};
use sobelkey::detector::{detect, DetectConfig, SobelNet, SobelNetConfig};
use sobelkey::eval::{evaluate, synth_benchmark, Assignment, BenchmarkMode, EvalConfig, EvalPair, Summary};
use sobelkey::image::GrayImage;
use sobelkey::train::{load_dataset, train_descriptor, train_detector, Event, Sampling, TrainConfig};

use crate::Outcome;

const STEPS: u64 = 2000;
const HELD_OUT: usize = 100;
const SIZE: usize = 128;

static DETECTOR: OnceLock<SobelNet> = OnceLock::new();

fn eval_config() -> EvalConfig {
    EvalConfig {
        detect: DetectConfig {
            nms_radius: DetectConfig::FMBENCH_NMS_RADIUS,
            ..DetectConfig::default()
        },
        tol: 5.0,
        assignment: Assignment::Optimal,
    }
}

fn stage_config(mut cfg: TrainConfig) -> TrainConfig {
    cfg.steps = STEPS;
    cfg.batch = 1;
    cfg.seed = 0;
    cfg
}

fn images(cfg: &TrainConfig) -> Vec<GrayImage> {
    load_dataset(&cfg.dataset, cfg.seed).unwrap()
}

fn held_out() -> Vec<EvalPair> {
    synth_benchmark(HELD_OUT, SIZE, BenchmarkMode::Viewpoint, 0xacce_97ed).unwrap()
}

fn progress(label: &'static str) -> impl FnMut(Event<'_>) {
    move |e| match e {
        Event::Step(r) if r.step % 500 == 0 => {
            println!("    {label} step {} loss {:?}", r.step, r.total());
        }
        Event::Warning(w) => println!("    {label} warning: {w}"),
        _ => {}
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn trained_detector() -> &'static SobelNet {
    DETECTOR.get_or_init(|| {
        let cfg = stage_config(TrainConfig::detector());
        train_detector(&cfg, &images(&cfg), None, &mut progress("detector"))
            .unwrap()
            .checkpoint
            .sobelnet()
            .unwrap()
    })
}

pub fn detector() -> Outcome {
    let cfg = stage_config(TrainConfig::detector());
    let imgs = images(&cfg);
    let outcome = train_detector(&cfg, &imgs, None, &mut progress("detector")).unwrap();
    let losses: Vec<f64> = outcome.records.iter().filter_map(|r| r.total()).collect();
    let (first, last) = (mean(&losses[..100]), mean(&losses[losses.len() - 100..]));
    let net = outcome.checkpoint.sobelnet().unwrap();
    let _ = DETECTOR.set(net.clone());

    let pairs = held_out();
    let ecfg = eval_config();
    let base = evaluate(&SobelNet::new_random(SobelNetConfig::default(), cfg.seed), None, &pairs, &ecfg)
        .unwrap()
        .overall();
    let trained = evaluate(&net, None, &pairs, &ecfg).unwrap().overall();
    let a = last < 0.5 * first;
    let b = trained.rep >= base.rep + 15.0;
    let c = trained.kpts >= 50.0;
    Outcome::new(
        a && b && c,
        format!(
            "(a) loss {first:.4} -> {last:.4} {}, (b) Rep {:.1} vs random init {:.1} {}, (c) {:.1} kpts/img (init {:.1}) {}",
            mark(a),
            trained.rep,
            base.rep,
            mark(b),
            trained.kpts,
            base.kpts,
            mark(c)
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "short"
    }
}

/// Mean cosine of true correspondences minus that of all other pairings,
/// over detector keypoints of A that land inside B.
fn separation(det: &SobelNet, desc: &DesNet, pairs: &[EvalPair]) -> (f64, usize) {
    let cfg = eval_config().detect;
    let (mut matched, mut mismatched) = (Vec::new(), Vec::new());
    let mut points = 0;
    for p in pairs {
        let kp = detect(&p.a, det, &cfg).unwrap();
        let (w, h) = (p.b.width() as f64, p.b.height() as f64);
        let (mut pa, mut pb) = (Vec::new(), Vec::new());
        for (x, y) in kp.coords() {
            if let Some((u, v)) = p.homography.apply(x as f64, y as f64) {
                if u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0 {
                    pa.push((x, y));
                    pb.push((u as f32, v as f32));
                }
            }
        }
        if pa.len() < 2 {
            continue;
        }
        let da = sample_descriptors(&desc.descriptor_map(&p.a).unwrap(), &pa).unwrap();
        let db = sample_descriptors(&desc.descriptor_map(&p.b).unwrap(), &pb).unwrap();
        let n = pa.len();
        points += n;
        for i in 0..n {
            for j in 0..n {
                let s: f64 = da.row(i).iter().zip(db.row(j)).map(|(x, y)| *x as f64 * *y as f64).sum();
                if i == j {
                    matched.push(s);
                } else {
                    mismatched.push(s);
                }
            }
        }
    }
    (mean(&matched) - mean(&mismatched), points)
}

fn train_desnet(det: &SobelNet, sampling: Sampling, label: &'static str) -> DesNet {
    let mut cfg = stage_config(TrainConfig::descriptor());
    cfg.sampling = sampling;
    train_descriptor(&cfg, &images(&cfg), det, None, &mut progress(label))
        .unwrap()
        .checkpoint
        .desnet()
        .unwrap()
}

fn mma(s: &Summary) -> f64 {
    s.mma.unwrap_or(0.0)
}

pub fn descriptor() -> Outcome {
    let det = trained_detector();
    let pairs = held_out();
    let ecfg = eval_config();
    let seed = stage_config(TrainConfig::descriptor()).seed;
    let base_net = DesNet::new_random(DesNetConfig::default(), seed).unwrap();
    let trained = train_desnet(det, Sampling::Candidates, "descriptor");
    let ablation = train_desnet(det, Sampling::Random, "random-point descriptor");

    let score = |net: &DesNet| evaluate(det, Some(net), &pairs, &ecfg).unwrap().overall();
    let (base, main, abl) = (score(&base_net), score(&trained), score(&ablation));
    let (sep, points) = separation(det, &trained, &pairs);
    let (base_sep, _) = separation(det, &base_net, &pairs);
    let a = sep >= 0.2;
    let b = mma(&main) >= mma(&base) + 20.0;
    let c = mma(&main) >= mma(&abl);
    Outcome::new(
        a && b && c,
        format!(
            "separation {sep:.3} (init {base_sep:.3}, {points} pts) {}, MMA {:.1} vs random init {:.1} {}, \
             vs random-point training {:.1} {} ({:.1} kpts/img)",
            mark(a),
            mma(&main),
            mma(&base),
            mark(b),
            mma(&abl),
            mark(c),
            main.kpts
        ),
    )
}
