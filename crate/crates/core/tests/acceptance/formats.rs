//! Reproducible training, bitwise round trips and metric sanity.

use std::path::{Path, PathBuf};

use sobelkey::descriptor::{DesNet, DesNetConfig, DescriptorSet};
use sobelkey::detector::{DetectConfig, Keypoint, KeypointSet, SobelNet, SobelNetConfig};
use sobelkey::eval::{
    homography_to_text, load_pair_dir, parse_homography, repeatability, score_pair, synth_benchmark,
    write_pair_dir, Assignment, BenchmarkMode, EvalConfig, Features, Match, MatchList, PairKind,
};
use sobelkey::image::io::{decode_gray, encode_pgm};
use sobelkey::image::Homography;
use sobelkey::synth::synth_image;
use sobelkey::train::{load_dataset, train_descriptor, train_detector, Checkpoint, DatasetSpec, Sampling, TrainConfig};

use crate::common::Rng;
use crate::oracles::random_homography;
use crate::Outcome;

fn tiny(mut cfg: TrainConfig, steps: u64) -> TrainConfig {
    cfg.dataset = DatasetSpec::Synthetic { count: 6, size: 64 };
    cfg.steps = steps;
    cfg.batch = 3;
    cfg.seed = 11;
    cfg
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

/// `(detector bytes, descriptor bytes)` of a short run on `threads` workers.
fn short_run(threads: usize) -> (Vec<u8>, Vec<u8>) {
    in_pool(threads, || {
        let dcfg = tiny(TrainConfig::detector(), 4);
        let images = load_dataset(&dcfg.dataset, dcfg.seed).unwrap();
        let det = train_detector(&dcfg, &images, None, &mut |_| {}).unwrap().checkpoint;
        let mut ccfg = tiny(TrainConfig::descriptor(), 4);
        ccfg.sampling = Sampling::Candidates;
        let desc = train_descriptor(&ccfg, &images, &det.sobelnet().unwrap(), None, &mut |_| {})
            .unwrap()
            .checkpoint;
        (det.to_bytes(), desc.to_bytes())
    })
}

fn temp_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Names of the formats whose write-read-write cycle changed a byte.
fn round_trips() -> Vec<&'static str> {
    let mut rng = Rng::new(0x9007);
    let dir = tempfile::tempdir().unwrap();
    let mut broken = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            broken.push(name);
        }
    };

    let pts: Vec<Keypoint> = (0..40)
        .map(|_| Keypoint {
            x: rng.uniform(0.0, 95.0) as f32,
            y: rng.uniform(0.0, 63.0) as f32,
            score: rng.uniform(0.0, 1.0) as f32,
        })
        .collect();
    let kp = KeypointSet::new(96, 64, pts);
    let p = temp_path(dir.path(), "a.kpts");
    kp.write(&p).unwrap();
    // six-decimal text: the file, not the in-memory f32, is what must survive
    let back = KeypointSet::read(&p).unwrap();
    let p2 = temp_path(dir.path(), "b.kpts");
    back.write(&p2).unwrap();
    check(
        "keypoints",
        std::fs::read(&p).unwrap() == std::fs::read(&p2).unwrap() && KeypointSet::read(&p2).unwrap() == back,
    );

    let dim = 32;
    let data: Vec<f32> = (0..40 * dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    let coords = kp.coords();
    let ds = DescriptorSet::new(dim, coords, data).unwrap();
    let p = temp_path(dir.path(), "a.desc");
    ds.write(&p).unwrap();
    let back = DescriptorSet::read(&p).unwrap();
    check("descriptors", back == ds && back.to_bytes() == std::fs::read(&p).unwrap());

    for ck in [
        Checkpoint::from_sobelnet(&SobelNet::new_random(SobelNetConfig::default(), 3), 17, 0xabcd, None),
        Checkpoint::from_desnet(&DesNet::new_random(DesNetConfig::default(), 4).unwrap(), 5, 7, None),
    ] {
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        check("checkpoint", back.to_bytes() == bytes);
    }

    let ml = MatchList {
        n_a: 9,
        n_b: 7,
        matches: (0..7).map(|k| Match { i: k + 1, j: 6 - k, sim: rng.uniform(-1.0, 1.0) }).collect(),
    };
    let p = temp_path(dir.path(), "m.txt");
    ml.write(&p).unwrap();
    let back = MatchList::read(&p).unwrap();
    check("matches", back.to_text() == ml.to_text() && back.to_text() == std::fs::read_to_string(&p).unwrap());

    let img = synth_image(70, 64, 5, 2).unwrap();
    let bytes = encode_pgm(&img);
    let back = decode_gray(&bytes, Path::new("mem.pgm")).unwrap();
    check("pgm", encode_pgm(&back) == bytes);

    let mut cfg = TrainConfig::descriptor();
    cfg.set("lr", "0.00025").unwrap();
    cfg.set("margin", "0.2").unwrap();
    let text = cfg.to_text();
    let mut again = TrainConfig::descriptor();
    again.apply(&text).unwrap();
    check("config", again == cfg && again.to_text() == text);

    let hm = random_homography(&mut rng, 64, 64, 8.0);
    let text = homography_to_text(&hm);
    let back = parse_homography(&text, Path::new("h.txt")).unwrap();
    check("homography", back == hm && homography_to_text(&back) == text);

    let pairs = synth_benchmark(3, 64, BenchmarkMode::Mixed, 9).unwrap();
    let (d1, d2) = (dir.path().join("p1"), dir.path().join("p2"));
    write_pair_dir(&d1, &pairs).unwrap();
    write_pair_dir(&d2, &load_pair_dir(&d1).unwrap()).unwrap();
    let same = std::fs::read_dir(&d1).unwrap().all(|e| {
        let e = e.unwrap();
        std::fs::read(e.path()).unwrap() == std::fs::read(d2.join(e.file_name())).unwrap_or_default()
    });
    check("pair directory", same);
    broken
}

pub fn determinism() -> Outcome {
    let single = short_run(1);
    let again = short_run(1);
    let wide = short_run(4);
    let same = single == again;
    let thread_free = single == wide;
    let broken = round_trips();
    let detail = format!(
        "repeat runs {}, 1 vs 4 threads {}, round trips {}",
        if same { "identical" } else { "differ" },
        if thread_free { "identical" } else { "differ" },
        if broken.is_empty() { "all bitwise".to_string() } else { format!("broken: {}", broken.join(", ")) }
    );
    Outcome::new(same && thread_free && broken.is_empty(), detail)
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/assets")
}

pub fn metric_sanity() -> Outcome {
    let mut nets: Vec<(String, SobelNet, DesNet)> = (0..3)
        .map(|s| {
            (
                format!("random init {s}"),
                SobelNet::new_random(SobelNetConfig::default(), s),
                DesNet::new_random(DesNetConfig::default(), s).unwrap(),
            )
        })
        .collect();
    let (det, desc) = (assets().join("demo_detector.skcp"), assets().join("demo_descriptor.skcp"));
    if let (Ok(d), Ok(c)) = (Checkpoint::load(&det), Checkpoint::load(&desc)) {
        nets.push(("demo".into(), d.sobelnet().unwrap(), c.desnet().unwrap()));
    }
    let images: Vec<_> = (0..6).map(|i| synth_image(96, 96, 77, i).unwrap()).collect();
    let (mut short, mut unexplained) = (Vec::new(), 0);
    let cfg = EvalConfig {
        tol: 5.0,
        assignment: Assignment::Optimal,
        ..EvalConfig::default()
    };
    for radius in [DetectConfig::FMBENCH_NMS_RADIUS, DetectConfig::default().nms_radius] {
        let detect = DetectConfig {
            nms_radius: radius,
            ..DetectConfig::default()
        };
        for (name, d, c) in &nets {
            for (k, img) in images.iter().enumerate() {
                let f = Features::extract(img, d, Some(c), &detect).unwrap();
                let r = score_pair(&f, &f, &Homography::identity(), PairKind::Identity, &cfg);
                if r.rep == 100.0 && r.ms == Some(100.0) && r.mma == Some(100.0) && r.kpts_a > 0 {
                    continue;
                }
                // bit-identical descriptors at two keypoints cannot both win a mutual-NN tie
                let dup = duplicate_rows(f.descriptors.as_ref().unwrap());
                if dup == 0 || r.rep != 100.0 {
                    unexplained += 1;
                }
                short.push(format!(
                    "{name} nms {radius} image {k}: M.S. {:.1} with {dup} duplicated descriptor(s)",
                    r.ms.unwrap_or(0.0)
                ));
            }
        }
    }

    // empty sets: no keypoints on one or both sides
    let h = Homography::identity();
    let empty = Features::new(KeypointSet::empty(64, 64), Some(DescriptorSet::new(8, Vec::new(), Vec::new()).unwrap())).unwrap();
    let one = Features::new(
        KeypointSet::new(64, 64, vec![Keypoint { x: 3.0, y: 4.0, score: 1.0 }]),
        Some(DescriptorSet::new(8, vec![(3.0, 4.0)], vec![1.0; 8]).unwrap()),
    )
    .unwrap();
    let cfg = EvalConfig::default();
    let mut empty_ok = repeatability(&[], &[], &h, 5.0, Assignment::Optimal) == 0.0;
    for (a, b) in [(&empty, &empty), (&empty, &one), (&one, &empty)] {
        let r = score_pair(a, b, &h, PairKind::Identity, &cfg);
        empty_ok &= r.rep == 0.0 && r.ms == Some(0.0) && r.mma == Some(0.0) && r.possible == 0;
    }
    let detail = format!(
        "{} checkpoints x 6 self pairs x 2 nms radii{}, empty sets {}",
        nets.len(),
        if short.is_empty() { " all 100".to_string() } else { format!(", below 100: {}", short.join("; ")) },
        if empty_ok { "give 0" } else { "broken" }
    );
    Outcome::new(short.is_empty() && empty_ok, detail).known(unexplained == 0 && empty_ok)
}

/// Rows whose exact bit pattern also occurs at a lower index.
fn duplicate_rows(d: &DescriptorSet) -> usize {
    let mut seen = std::collections::HashSet::new();
    (0..d.len())
        .filter(|&i| !seen.insert(d.row(i).iter().map(|v| v.to_bits()).collect::<Vec<u32>>()))
        .count()
}
