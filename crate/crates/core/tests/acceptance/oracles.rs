//! Closed-form counts, loss oracles and brute-force checks of the discrete steps.

use std::collections::BTreeSet;

use sobelkey::descriptor::{DesNet, DesNetConfig, DescriptorSet};
use sobelkey::detector::{local_maxima, nms, SobelNet, SobelNetConfig};
use sobelkey::eval::{mutual_nn_match, possible_matches, shared_view_filter, Assignment};
use sobelkey::gauss::{corner_point_map, cross_warp_loss, gauss_loss, gauss_score_map, CrossWarpConfig, CrossWarpInputs, GaussianKernel};
use sobelkey::image::{BinaryMap, Homography, Plane};

use crate::common::{self, Rng};
use crate::Outcome;

/// Near-identity homography of a `w x h` frame: rotation, scale, shift and a little perspective.
pub fn random_homography(rng: &mut Rng, w: usize, h: usize, shift: f64) -> Homography {
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let a = rng.uniform(-0.35, 0.35);
    let s = rng.uniform(0.85, 1.15);
    let (tx, ty) = (rng.uniform(-shift, shift), rng.uniform(-shift, shift));
    let (px, py) = (rng.uniform(-2e-3, 2e-3), rng.uniform(-2e-3, 2e-3));
    let (c, si) = (s * a.cos(), s * a.sin());
    // similarity about the centre, then a projective row around the centre
    let sim = Homography::from_rows([
        [c, -si, cx - c * cx + si * cy + tx],
        [si, c, cy - si * cx - c * cy + ty],
        [0.0, 0.0, 1.0],
    ])
    .unwrap();
    let persp = Homography::from_rows([
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [px, py, 1.0 - px * cx - py * cy],
    ])
    .unwrap();
    persp.after(&sim).unwrap()
}

pub fn flops() -> Outcome {
    let sobel = SobelNet::count_multiplications(&SobelNetConfig::default(), 640, 480);
    let des = DesNet::count_multiplications(&DesNetConfig::default(), 640, 480);
    let sobel_err = (sobel as f64 - 1.889e9).abs() / 1.889e9;
    let des_err = (des as f64 - 4.819e9).abs() / 4.819e9;
    Outcome::new(
        sobel == 1_889_280_000 && sobel_err < 1e-3 && des_err < 0.05,
        format!("SobelNet {sobel} ({:+.3}%), DesNet {des} ({:+.2}%)", sobel_err * 100.0, des_err * 100.0),
    )
}

fn random_plane(rng: &mut Rng, w: usize, h: usize, power: i32) -> Plane {
    Plane::new(w, h, (0..w * h).map(|_| rng.uniform(0.0, 1.0).powi(power) as f32).collect()).unwrap()
}

/// Score-like map: about a third zeros, the rest skewed towards 0.
fn sparse_plane(rng: &mut Rng, w: usize, h: usize) -> Plane {
    Plane::new(w, h, (0..w * h).map(|_| rng.uniform(-0.5, 1.0).max(0.0).powi(2) as f32).collect()).unwrap()
}

pub fn cross_warp() -> Outcome {
    let mut rng = Rng::new(0xc405);
    let cfg = CrossWarpConfig::default();
    let (w, h) = (64, 64);
    let (mut worst, mut count_mismatch, mut bad) = (0.0f64, 0, 0);
    let mut active = 0;
    for _ in 0..50 {
        let osp = sparse_plane(&mut rng, w, h);
        let tsp = sparse_plane(&mut rng, w, h);
        let so = random_plane(&mut rng, w, h, 3);
        let st = random_plane(&mut rng, w, h, 3);
        let hm = random_homography(&mut rng, w, h, 6.0);
        let engine = cross_warp_loss(
            &CrossWarpInputs {
                osp: &osp,
                tsp: &tsp,
                homography: &hm,
                sobel_orig: &so,
                sobel_trans: &st,
            },
            &cfg,
        )
        .unwrap();
        let reference = common::cross_warp(
            osp.data(),
            tsp.data(),
            w,
            h,
            &hm.rows(),
            so.data(),
            st.data(),
            &cfg.radii,
            cfg.alpha,
            cfg.eps,
        );
        let mut total = 0.0;
        for (s, &(lo, lt, n1, n2)) in engine.scales.iter().zip(&reference) {
            if (s.active_orig, s.active_trans) != (n1, n2) {
                count_mismatch += 1;
            }
            active += n1 + n2;
            for (a, b) in [(s.osp, lo), (s.tsp, lt)] {
                worst = worst.max((a - b).abs() / b.abs().max(1e-12));
            }
            total += lo + lt;
        }
        let rel = (engine.total - total).abs() / total.abs().max(1e-12);
        worst = worst.max(rel);
        if !(rel < 1e-5) {
            bad += 1;
        }
    }
    Outcome::new(
        bad == 0 && count_mismatch == 0 && worst < 1e-5,
        format!("50 cases, worst rel err {worst:.2e}, {count_mismatch} corner-count mismatches, {active} corner points"),
    )
}

/// Two butt-ended arms leaving `(vx, vy)` with a Gaussian cross-section.
fn corner_image(w: usize, h: usize, v: (f64, f64), dirs: [(f64, f64); 2], len: f64, sigma: f64) -> Plane {
    Plane::from_fn(w, h, |x, y| {
        let (qx, qy) = (x as f64 - v.0, y as f64 - v.1);
        dirs.iter()
            .map(|&(dx, dy)| {
                let t = qx * dx + qy * dy;
                let d = -qx * dy + qy * dx;
                if (0.0..=len).contains(&t) {
                    (-d * d / (2.0 * sigma * sigma)).exp()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max) as f32
    })
}

pub fn corner_dominance() -> Outcome {
    let mut rng = Rng::new(0xc0de);
    let r = 8;
    let k = GaussianKernel::new(r).unwrap();
    let (w, h) = (96, 96);
    let len = (4 * r + 4) as f64;
    let mut passed = 0;
    let mut misses = Vec::new();
    for _ in 0..50 {
        let angle = rng.uniform(60.0, 120.0).to_radians();
        let width = rng.uniform(1.0, 3.0);
        let phi = rng.uniform(0.0, std::f64::consts::TAU);
        let vx = 48 + rng.below(9) - 4;
        let vy = 48 + rng.below(9) - 4;
        let dirs = [(phi.cos(), phi.sin()), ((phi + angle).cos(), (phi + angle).sin())];
        let img = corner_image(w, h, (vx as f64, vy as f64), dirs, len, width / 2.0);
        let gs = gauss_score_map(&img, &k, 1e-8).unwrap();
        let corner = gs.get(vx, vy);
        let mut mid = f32::MIN;
        for &(dx, dy) in &dirs {
            for t in 2 * r..=(len as usize - r - 1) {
                let x = (vx as f64 + t as f64 * dx).round() as usize;
                let y = (vy as f64 + t as f64 * dy).round() as usize;
                mid = mid.max(gs.get(x, y));
            }
        }
        if corner > mid {
            passed += 1;
        } else {
            misses.push(format!("{:.0}deg/{width:.1}px", angle.to_degrees()));
        }
    }
    let misses = if misses.is_empty() { String::new() } else { format!(", misses {}", misses.join(" ")) };
    Outcome::new(passed >= 48, format!("{passed}/50 corners dominate at r={r}{misses}"))
}

/// Active set as training builds it: Gauss-score maxima at radius `r / 2`.
fn corner_map(p: &Plane, k: &GaussianKernel, r: usize) -> BinaryMap {
    let gs = gauss_score_map(p, k, 1e-8).unwrap();
    let all = BinaryMap::filled(p.width(), p.height(), true);
    corner_point_map(&gs, &all, (r / 2).max(1)).unwrap()
}

pub fn loss_range() -> Outcome {
    let mut rng = Rng::new(0x105e);
    let (mut out_of_range, mut worst_scale, mut rot_diff, mut rot_checked) = (0, 0.0f64, 0, 0);
    for case in 0..100 {
        let (w, h) = (20 + rng.below(13), 20 + rng.below(13));
        let p = sparse_plane(&mut rng, w, h);
        let r = [4, 6, 8][case % 3];
        let k = GaussianKernel::new(r).unwrap();
        let sparse = gauss_loss(&p, &corner_map(&p, &k, r), &k, 1e-8).unwrap();
        if !(0.0..=1.0).contains(&sparse) {
            out_of_range += 1;
        }
        let dense = random_plane(&mut rng, w, h, 1);
        let dense_cm = corner_map(&dense, &k, r);
        let base = gauss_loss(&dense, &dense_cm, &k, 1e-8).unwrap();
        for c in [0.5f32, 2.0, 10.0] {
            let scaled = gauss_loss(&dense.map(|v| v * c), &dense_cm, &k, 1e-8).unwrap();
            if !(0.0..=1.0).contains(&scaled) {
                out_of_range += 1;
            }
            worst_scale = worst_scale.max((scaled - base).abs());
        }
        // rotating the input rotates the score map; compare away from the borders
        let a = gauss_score_map(&p.rot90(), &k, 1e-8).unwrap();
        let b = gauss_score_map(&p, &k, 1e-8).unwrap().rot90();
        for y in r..a.height().saturating_sub(r) {
            for x in r..a.width().saturating_sub(r) {
                rot_checked += 1;
                if a.get(x, y).to_bits() != b.get(x, y).to_bits() {
                    rot_diff += 1;
                }
            }
        }
    }
    Outcome::new(
        out_of_range == 0 && worst_scale <= 1e-6 && rot_diff == 0 && rot_checked > 0,
        format!(
            "100 maps, {out_of_range} out of [0,1], worst scale drift {worst_scale:.1e}, \
             {rot_diff}/{rot_checked} interior rotation mismatches"
        ),
    )
}

fn nms_cases(rng: &mut Rng) -> (usize, usize) {
    let mut bad = 0;
    let mut n = 0;
    for case in 0..150 {
        let (w, h) = if case % 3 == 0 { (32, 32) } else { (1 + rng.below(32), 1 + rng.below(32)) };
        let radius = [1, 2, 7][case % 3];
        let data: Vec<f32> = if case % 2 == 0 {
            // coarse levels force plateaus and ties
            (0..w * h).map(|_| (rng.below(5) as f32) / 4.0).collect()
        } else {
            (0..w * h).map(|_| rng.uniform(-0.3, 1.0).max(0.0) as f32).collect()
        };
        let expect: Vec<(usize, usize)> = common::nms(&data, w, h, radius);
        let plane = Plane::new(w, h, data).unwrap();
        let got: Vec<(usize, usize)> = local_maxima(&plane, radius).into_iter().map(|(x, y, _)| (x, y)).collect();
        let kp: BTreeSet<(usize, usize)> = nms(&plane, radius)
            .unwrap()
            .points
            .iter()
            .map(|p| (p.x as usize, p.y as usize))
            .collect();
        if got != expect || kp != expect.iter().cloned().collect() {
            bad += 1;
        }
        n += 1;
    }
    (n, bad)
}

fn mutual_nn_cases(rng: &mut Rng) -> (usize, usize) {
    let mut bad = 0;
    let mut n = 0;
    for case in 0..150 {
        let (na, nb, dim) = (rng.below(13), rng.below(13), 1 + rng.below(8));
        let mut draw = |count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|_| {
                    (0..dim)
                        .map(|_| if case % 2 == 0 { rng.below(3) as f64 - 1.0 } else { rng.uniform(-1.0, 1.0) })
                        .collect()
                })
                .collect()
        };
        let (a, b) = (draw(na), draw(nb));
        let set = |v: &[Vec<f64>]| {
            let data = v.iter().flatten().map(|&x| x as f32).collect();
            DescriptorSet::new(dim, vec![(0.0, 0.0); v.len()], data).unwrap()
        };
        let got: Vec<(usize, usize)> = mutual_nn_match(&set(&a), &set(&b)).iter().map(|m| (m.i, m.j)).collect();
        let expect = if na == 0 || nb == 0 { Vec::new() } else { common::mutual_nn(&a, &b) };
        if got != expect {
            bad += 1;
        }
        n += 1;
    }
    (n, bad)
}

/// Up to `max` points, count drawn uniformly.
fn points(rng: &mut Rng, max: usize, lo: f64, hi: f64) -> Vec<(f32, f32)> {
    let n = rng.below(max + 1);
    (0..n).map(|_| (rng.uniform(lo, hi) as f32, rng.uniform(lo, hi) as f32)).collect()
}

fn to64(p: (f32, f32)) -> (f64, f64) {
    (p.0 as f64, p.1 as f64)
}

fn shared_view_cases(rng: &mut Rng) -> (usize, usize) {
    let mut bad = 0;
    let mut n = 0;
    for _ in 0..150 {
        let size_a = (32, 32);
        let size_b = (20 + rng.below(13), 20 + rng.below(13));
        let hm = random_homography(rng, 32, 32, 12.0);
        let pa = points(rng, 12, 0.0, 31.0);
        let pb = points(rng, 12, 0.0, (size_b.0.min(size_b.1) - 1) as f64);
        let got = shared_view_filter(&pa, size_a, &pb, size_b, &hm);
        let m = hm.rows();
        let inv = common::inverse3(&m);
        let inside = |q: Option<(f64, f64)>, (w, h): (usize, usize)| {
            q.is_some_and(|(x, y)| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64)
        };
        let keep_a: Vec<usize> = (0..pa.len())
            .filter(|&i| inside(common::project(&m, pa[i].0 as f64, pa[i].1 as f64), size_b))
            .collect();
        let keep_b: Vec<usize> = (0..pb.len())
            .filter(|&i| inside(common::project(&inv, pb[i].0 as f64, pb[i].1 as f64), size_a))
            .collect();
        if got.a != keep_a || got.b != keep_b {
            bad += 1;
        }
        n += 1;
    }
    (n, bad)
}

/// Returns `(cases, optimal mismatches, greedy mismatches, greedy below optimal)`.
fn assignment_cases(rng: &mut Rng) -> (usize, usize, usize, usize) {
    let (mut n, mut bad_opt, mut bad_greedy, mut greedy_short) = (0, 0, 0, 0);
    for case in 0..200 {
        let hm = random_homography(rng, 32, 32, 4.0);
        let m = hm.rows();
        let tol = if case % 2 == 0 { 5.0 } else { rng.uniform(1.0, 6.0) };
        let pa = points(rng, 12, 2.0, 29.0);
        // B holds jittered images of some A points plus clutter, so pairs compete
        let mut pb = Vec::new();
        for &p in &pa {
            if rng.below(4) == 0 {
                continue;
            }
            if let Some((x, y)) = common::project(&m, p.0 as f64, p.1 as f64) {
                pb.push(((x + rng.uniform(-6.0, 6.0)) as f32, (y + rng.uniform(-6.0, 6.0)) as f32));
            }
        }
        pb.extend(points(rng, 4, 0.0, 31.0));
        pb.truncate(12);
        let dist = |i: usize, j: usize| common::pair_distance(to64(pa[i]), to64(pb[j]), &m);
        let best = common::max_matching(pa.len(), pb.len(), |i, j| dist(i, j) <= tol);
        let opt = possible_matches(&pa, &pb, &hm, tol, Assignment::Optimal);
        let valid = |pairs: &[(usize, usize)]| {
            let a: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
            let b: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
            a.len() == pairs.len() && b.len() == pairs.len() && pairs.iter().all(|&(i, j)| dist(i, j) <= tol)
        };
        if opt.len() != best || !valid(&opt) {
            bad_opt += 1;
        }
        let greedy = possible_matches(&pa, &pb, &hm, tol, Assignment::Greedy);
        if greedy.len() != common::greedy_matching(pa.len(), pb.len(), dist, tol) || !valid(&greedy) {
            bad_greedy += 1;
        }
        if greedy.len() < best {
            greedy_short += 1;
        }
        n += 1;
    }
    (n, bad_opt, bad_greedy, greedy_short)
}

pub fn brute_force() -> Outcome {
    let mut rng = Rng::new(0xb4f0);
    let (n_nms, bad_nms) = nms_cases(&mut rng);
    let (n_nn, bad_nn) = mutual_nn_cases(&mut rng);
    let (n_sv, bad_sv) = shared_view_cases(&mut rng);
    let (n_pm, bad_opt, bad_greedy, short) = assignment_cases(&mut rng);
    let pass = bad_nms + bad_nn + bad_sv + bad_opt + bad_greedy == 0 && n_nms.min(n_nn).min(n_sv).min(n_pm) >= 100;
    Outcome::new(
        pass,
        format!(
            "mismatches: nms {bad_nms}/{n_nms}, mutual-nn {bad_nn}/{n_nn}, shared-view {bad_sv}/{n_sv}, \
             optimal {bad_opt}/{n_pm}, greedy {bad_greedy}/{n_pm} (greedy below optimum in {short})"
        ),
    )
}
