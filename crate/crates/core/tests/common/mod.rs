//! Straight-line f64 references and brute-force oracles for the integration tests.
//!
//! Nothing here calls the library's numeric kernels; inputs are plain slices.

#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Rng(pub ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    /// Value at least `gap` away from zero, useful to stay clear of activation kinks.
    pub fn away_from_zero(&mut self, scale: f64, gap: f64) -> f64 {
        let v = self.uniform(gap, scale);
        if self.0.gen_bool(0.5) {
            v
        } else {
            -v
        }
    }
}

/// `[C, H, W]` feature map in f64.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Map { c, h, w, data }
    }

    pub fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }
}

/// Zero-padded cross-correlation with weights `[cout, cin, k, k]`.
pub fn conv(x: &Map, weight: &[f64], bias: &[f64], k: usize, stride: usize, pad: usize) -> Map {
    let cout = bias.len();
    assert_eq!(weight.len(), cout * x.c * k * k);
    let ho = (x.h + 2 * pad - k) / stride + 1;
    let wo = (x.w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias[o];
                for i in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            acc += weight[((o * x.c + i) * k + ky) * k + kx] * x.at(i, iy as usize, ix as usize);
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Map::new(cout, ho, wo, out)
}

pub fn leaky(x: &Map, slope: f64) -> Map {
    Map::new(x.c, x.h, x.w, x.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect())
}

/// Source position of output index `o` for a half-pixel-centre resize, clamped below at 0.
fn source_coord(o: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
    let lo = (s.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, if lo == hi { 0.0 } else { s - lo as f64 })
}

pub fn resize(x: &Map, oh: usize, ow: usize) -> Map {
    if oh == x.h && ow == x.w {
        return x.clone();
    }
    let mut out = vec![0.0; x.c * oh * ow];
    for ch in 0..x.c {
        for oy in 0..oh {
            let (y0, y1, fy) = source_coord(oy, x.h, oh);
            for ox in 0..ow {
                let (x0, x1, fx) = source_coord(ox, x.w, ow);
                let v = x.at(ch, y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + x.at(ch, y0, x1) * fx * (1.0 - fy)
                    + x.at(ch, y1, x0) * (1.0 - fx) * fy
                    + x.at(ch, y1, x1) * fx * fy;
                out[(ch * oh + oy) * ow + ox] = v;
            }
        }
    }
    Map::new(x.c, oh, ow, out)
}

/// `(weight, bias, kernel)` of one conv layer.
pub type Layer = (Vec<f64>, Vec<f64>, usize);

/// Pyramid edge levels through the shared trunk, upsampled and summed, then head, ReLU and max-normalisation.
pub fn sobelnet(levels: &[Map], trunk: &[Layer], head: &Layer, slope: f64, h: usize, w: usize) -> Map {
    sobelnet_traced(levels, trunk, head, slope, h, w).0
}

/// Which side of its kink every activation sits on, plus the argmax of the head.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Region {
    pub signs: Vec<bool>,
    pub argmax: usize,
}

pub fn sobelnet_traced(levels: &[Map], trunk: &[Layer], head: &Layer, slope: f64, h: usize, w: usize) -> (Map, Region) {
    let mut signs = Vec::new();
    let mut fused: Option<Map> = None;
    for level in levels {
        let mut x = level.clone();
        for (wt, b, k) in trunk {
            let pre = conv(&x, wt, b, *k, 1, (k - 1) / 2);
            signs.extend(pre.data.iter().map(|v| *v > 0.0));
            x = leaky(&pre, slope);
        }
        let up = resize(&x, h, w);
        fused = Some(match fused {
            None => up,
            Some(mut acc) => {
                for (a, u) in acc.data.iter_mut().zip(&up.data) {
                    *a += u;
                }
                acc
            }
        });
    }
    let (wt, b, k) = head;
    let out = conv(&fused.unwrap(), wt, b, *k, 1, (k - 1) / 2);
    signs.extend(out.data.iter().map(|v| *v > 0.0));
    let relu: Vec<f64> = out.data.iter().map(|v| v.max(0.0)).collect();
    let (argmax, m) = relu.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let data = if m > 0.0 { relu.iter().map(|v| v / m).collect() } else { vec![0.0; relu.len()] };
    (Map::new(1, h, w, data), Region { signs, argmax })
}

/// Unit-length vector; near-zero input becomes the first basis vector.
pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        e
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Conv stack with leaky activations between layers, L2-normalised per pixel.
pub fn desnet(img: &Map, layers: &[Layer], slope: f64) -> Map {
    desnet_traced(img, layers, slope).0
}

pub fn desnet_traced(img: &Map, layers: &[Layer], slope: f64) -> (Map, Region) {
    let mut signs = Vec::new();
    let mut x = img.clone();
    for (i, (wt, b, k)) in layers.iter().enumerate() {
        x = conv(&x, wt, b, *k, 1, (k - 1) / 2);
        if i + 1 < layers.len() {
            signs.extend(x.data.iter().map(|v| *v > 0.0));
            x = leaky(&x, slope);
        }
    }
    let mut out = x.clone();
    for y in 0..x.h {
        for xx in 0..x.w {
            let v: Vec<f64> = (0..x.c).map(|ch| x.at(ch, y, xx)).collect();
            for (ch, u) in unit(&v).into_iter().enumerate() {
                out.data[(ch * x.h + y) * x.w + xx] = u;
            }
        }
    }
    (out, Region { signs, argmax: 0 })
}

/// Bilinear sample of every channel at pixel-centre coordinates.
pub fn sample(map: &Map, x: f64, y: f64) -> Vec<f64> {
    let x0 = (x.floor() as usize).min(map.w - 1);
    let y0 = (y.floor() as usize).min(map.h - 1);
    let x1 = (x0 + 1).min(map.w - 1);
    let y1 = (y0 + 1).min(map.h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (0..map.c)
        .map(|c| {
            map.at(c, y0, x0) * (1.0 - fx) * (1.0 - fy)
                + map.at(c, y0, x1) * fx * (1.0 - fy)
                + map.at(c, y1, x0) * (1.0 - fx) * fy
                + map.at(c, y1, x1) * fx * fy
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + sum_n exp(gamma a_n (s_n - m)) * sum_p exp(-gamma a_p (s_p - 1 + m)))`.
pub fn circle(sp: &[f64], sn: &[f64], m: f64, gamma: f64) -> f64 {
    let pos: f64 = sp
        .iter()
        .map(|&s| (-gamma * (1.0 + m - s).max(0.0) * (s - (1.0 - m))).exp())
        .sum();
    let neg: f64 = sn.iter().map(|&s| (gamma * (s + m).max(0.0) * (s - m)).exp()).sum();
    (1.0 + pos * neg).ln()
}

/// Row mean of the circle loss with the diagonal as positives.
pub fn similarity_matrix_loss(sim: &[f64], n: usize, m: f64, gamma: f64) -> f64 {
    (0..n)
        .map(|i| {
            let row = &sim[i * n..(i + 1) * n];
            let neg: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| row[j]).collect();
            circle(&[row[i]], &neg, m, gamma)
        })
        .sum::<f64>()
        / n as f64
}

/// Mean circle loss of descriptors sampled at matching point lists.
pub fn descriptor_loss(d1: &Map, d2: &Map, first: &[(f64, f64)], second: &[(f64, f64)], m: f64, gamma: f64) -> f64 {
    let a: Vec<Vec<f64>> = first.iter().map(|&(x, y)| unit(&sample(d1, x, y))).collect();
    let b: Vec<Vec<f64>> = second.iter().map(|&(x, y)| unit(&sample(d2, x, y))).collect();
    let n = a.len();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = dot(&a[i], &b[j]);
        }
    }
    similarity_matrix_loss(&sim, n, m, gamma)
}

/// Full 2-D Gaussian window sum with replicate borders, `sigma = r / 2`.
pub fn window_sum(p: &[f64], w: usize, h: usize, x: usize, y: usize, r: usize) -> f64 {
    let sigma = r as f64 / 2.0;
    let mut s = 0.0;
    for dy in -(r as isize)..=r as isize {
        for dx in -(r as isize)..=r as isize {
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            s += g * p[yy * w + xx];
        }
    }
    s
}

pub fn gauss_score(p: &[f64], w: usize, h: usize, r: usize, eps: f64) -> Vec<f64> {
    (0..w * h)
        .map(|i| p[i] * p[i] / (window_sum(p, w, h, i % w, i / w, r) + eps))
        .collect()
}

/// Score-weighted mean of `1 - p / (S + eps)` over `active`.
pub fn gauss_loss(p: &[f64], w: usize, h: usize, active: &[usize], r: usize, eps: f64) -> f64 {
    if active.is_empty() {
        return 0.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in active {
        let d = window_sum(p, w, h, i % w, i / w, r) + eps;
        let a = p[i] / d;
        let g = p[i] * p[i] / d;
        num += (1.0 - a) * g;
        den += g;
    }
    num / (den + eps)
}

/// Definition-level NMS: positive, and beats every other window pixel by value
/// or, on a tie, by coming first in `(y, x)` order.
pub fn nms(v: &[f32], w: usize, h: usize, r: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let c = v[y * w + x];
            if !(c > 0.0) {
                continue;
            }
            let mut keep = true;
            for yy in 0..h {
                for xx in 0..w {
                    if (yy, xx) == (y, x) || yy.abs_diff(y) > r || xx.abs_diff(x) > r {
                        continue;
                    }
                    let o = v[yy * w + xx];
                    if o > c || (o == c && (yy, xx) < (y, x)) {
                        keep = false;
                    }
                }
            }
            if keep {
                out.push((x, y));
            }
        }
    }
    out
}

/// 3x3 inverse by cofactors.
pub fn inverse3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for cc in 0..3 {
            inv[r][cc] = cof[cc][r] / det;
        }
    }
    inv
}

pub fn project(m: &[[f64; 3]; 3], x: f64, y: f64) -> Option<(f64, f64)> {
    let z = m[2][0] * x + m[2][1] * y + m[2][2];
    if z.abs() < 1e-12 {
        return None;
    }
    Some(((m[0][0] * x + m[0][1] * y + m[0][2]) / z, (m[1][0] * x + m[1][1] * y + m[1][2]) / z))
}

/// Backward-mapped bilinear warp of a `w x h` map; outside samples are 0 and invalid.
pub fn warp(v: &[f32], w: usize, h: usize, m: &[[f64; 3]; 3]) -> (Vec<f32>, Vec<bool>) {
    let inv = inverse3(m);
    let mut out = vec![0.0f32; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let Some((sx, sy)) = project(&inv, x as f64, y as f64) else { continue };
            let slack = 1e-9;
            if sx < -slack || sy < -slack || sx > (w - 1) as f64 + slack || sy > (h - 1) as f64 + slack {
                continue;
            }
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let x0 = (sx.floor() as usize).min(w - 1);
            let y0 = (sy.floor() as usize).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let g = |xx: usize, yy: usize| v[yy * w + xx] as f64;
            let val = g(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + g(x1, y0) * fx * (1.0 - fy)
                + g(x0, y1) * (1.0 - fx) * fy
                + g(x1, y1) * fx * fy;
            out[y * w + x] = val as f32;
            valid[y * w + x] = true;
        }
    }
    (out, valid)
}

pub fn edge_mask(edges: &[f32], alpha: f32) -> Vec<bool> {
    let max = edges.iter().cloned().fold(0.0f32, f32::max);
    if !(max > 0.0) {
        return vec![false; edges.len()];
    }
    edges.iter().map(|&e| e > alpha * max).collect()
}

/// Loss components `(osp, tsp, |R1|, |R2|)` per radius of the two-view objective.
pub fn cross_warp(
    osp: &[f32],
    tsp: &[f32],
    w: usize,
    h: usize,
    m: &[[f64; 3]; 3],
    sobel_o: &[f32],
    sobel_t: &[f32],
    radii: &[usize],
    alpha: f32,
    eps: f64,
) -> Vec<(f64, f64, usize, usize)> {
    let inv = inverse3(m);
    let (osp_t, valid_ot) = warp(osp, w, h, m);
    let (tsp_t, valid_to) = warp(tsp, w, h, &inv);
    let mask_o: Vec<bool> = edge_mask(sobel_o, alpha).iter().zip(&valid_to).map(|(a, b)| *a && *b).collect();
    let mask_t: Vec<bool> = edge_mask(sobel_t, alpha).iter().zip(&valid_ot).map(|(a, b)| *a && *b).collect();
    let to64 = |v: &[f32]| v.iter().map(|&t| t as f64).collect::<Vec<f64>>();
    let (osp64, tsp64) = (to64(osp), to64(tsp));
    radii
        .iter()
        .map(|&r| {
            let nms_r = ((r as f64 / 2.0).round() as usize).max(1);
            // score maps are stored in f32 before suppression
            let score32 =
                |v: &[f32]| gauss_score(&to64(v), w, h, r, eps).into_iter().map(|s| s as f32).collect::<Vec<f32>>();
            let r1: Vec<usize> = nms(&score32(&tsp_t), w, h, nms_r)
                .into_iter()
                .map(|(x, y)| y * w + x)
                .filter(|&i| mask_o[i])
                .collect();
            let r2: Vec<usize> = nms(&score32(&osp_t), w, h, nms_r)
                .into_iter()
                .map(|(x, y)| y * w + x)
                .filter(|&i| mask_t[i])
                .collect();
            (
                gauss_loss(&osp64, w, h, &r1, r, eps),
                gauss_loss(&tsp64, w, h, &r2, r, eps),
                r1.len(),
                r2.len(),
            )
        })
        .collect()
}

/// Symmetric reprojection distance between `a` in A and `b` in B.
pub fn pair_distance(a: (f64, f64), b: (f64, f64), m: &[[f64; 3]; 3]) -> f64 {
    let inv = inverse3(m);
    let fwd = project(m, a.0, a.1).map_or(f64::INFINITY, |(x, y)| ((x - b.0).powi(2) + (y - b.1).powi(2)).sqrt());
    let bwd = project(&inv, b.0, b.1).map_or(f64::INFINITY, |(x, y)| ((x - a.0).powi(2) + (y - a.1).powi(2)).sqrt());
    fwd.max(bwd)
}

/// Maximum one-to-one matching size by exhaustive search: the set of B-subsets
/// matchable to a prefix of A, grown one A point at a time.
pub fn max_matching(n_a: usize, n_b: usize, ok: impl Fn(usize, usize) -> bool) -> usize {
    assert!(n_b <= 16);
    let mut reach = vec![false; 1 << n_b];
    reach[0] = true;
    for i in 0..n_a {
        let mut next = reach.clone();
        for mask in 0..(1usize << n_b) {
            if !reach[mask] {
                continue;
            }
            for j in 0..n_b {
                if mask & (1 << j) == 0 && ok(i, j) {
                    next[mask | (1 << j)] = true;
                }
            }
        }
        reach = next;
    }
    (0..(1usize << n_b)).filter(|&m| reach[m]).map(|m| m.count_ones() as usize).max().unwrap_or(0)
}

/// Closest-first one-to-one assignment, ties by `(i, j)`.
pub fn greedy_matching(n_a: usize, n_b: usize, dist: impl Fn(usize, usize) -> f64, tol: f64) -> usize {
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n_a {
        for j in 0..n_b {
            let d = dist(i, j);
            if d <= tol {
                edges.push((d, i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (mut ua, mut ub) = (vec![false; n_a], vec![false; n_b]);
    let mut n = 0;
    for (_, i, j) in edges {
        if !ua[i] && !ub[j] {
            ua[i] = true;
            ub[j] = true;
            n += 1;
        }
    }
    n
}

/// Mutual nearest neighbours by exhaustive cosine comparison; ties go to the lower index.
pub fn mutual_nn(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let scaled = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            v.clone()
        }
    };
    let a: Vec<Vec<f64>> = a.iter().map(scaled).collect();
    let b: Vec<Vec<f64>> = b.iter().map(scaled).collect();
    let best_in = |q: &Vec<f64>, set: &[Vec<f64>]| {
        let mut bi = 0;
        for k in 1..set.len() {
            if dot(q, &set[k]) > dot(q, &set[bi]) {
                bi = k;
            }
        }
        bi
    };
    let mut out = Vec::new();
    for (i, q) in a.iter().enumerate() {
        let j = best_in(q, &b);
        if best_in(&b[j], &a) == i {
            out.push((i, j));
        }
    }
    out
}

/// Central difference of `f` along `dir` with step `h`.
pub fn directional_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Central differences of `f` at every coordinate in `idx`.
pub fn coordinate_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], idx: &[usize], h: f64) -> Vec<f64> {
    idx.iter()
        .map(|&i| {
            let mut p = x.to_vec();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            (up - f(&p)) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)` on L2 norms.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
