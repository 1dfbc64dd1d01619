use crate::descriptor::DescriptorSet;
use crate::image::Homography;

/// Indices of the points in A and in B that the other view also sees.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SharedView {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

fn inside(p: Option<(f64, f64)>, (w, h): (usize, usize)) -> bool {
    match p {
        Some((x, y)) => x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64,
        None => false,
    }
}

/// Keeps A-points whose `h`-image lies in B and B-points whose `h^-1`-image lies in A.
pub fn shared_view_filter(
    pts_a: &[(f32, f32)],
    size_a: (usize, usize),
    pts_b: &[(f32, f32)],
    size_b: (usize, usize),
    h: &Homography,
) -> SharedView {
    let inv = h.inverse();
    let keep = |pts: &[(f32, f32)], h: &Homography, size| -> Vec<usize> {
        pts.iter()
            .enumerate()
            .filter(|(_, &(x, y))| inside(h.apply(x as f64, y as f64), size))
            .map(|(i, _)| i)
            .collect()
    };
    SharedView {
        a: keep(pts_a, h, size_b),
        b: keep(pts_b, &inv, size_a),
    }
}

/// Reprojection distance of a pair: the larger of the A-to-B and B-to-A errors,
/// so the metric does not depend on which image is called A.
pub fn pair_distance(a: (f32, f32), b: (f32, f32), h: &Homography, inv: &Homography) -> f64 {
    let dist = |p: Option<(f64, f64)>, q: (f32, f32)| match p {
        Some((x, y)) => (x - q.0 as f64).hypot(y - q.1 as f64),
        None => f64::INFINITY,
    };
    let fwd = dist(h.apply(a.0 as f64, a.1 as f64), b);
    let bwd = dist(inv.apply(b.0 as f64, b.1 as f64), a);
    fwd.max(bwd)
}

/// How possible matches are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Assignment {
    /// Maximum one-to-one matching among pairs within tolerance.
    #[default]
    Optimal,
    /// Closest pairs first, each point used once.
    Greedy,
}

impl Assignment {
    pub fn name(self) -> &'static str {
        match self {
            Assignment::Optimal => "optimal",
            Assignment::Greedy => "greedy",
        }
    }
}

/// All pairs `(i, j, d)` with `pair_distance <= tol`, sorted by `(i, d, j)`.
fn candidate_edges(pts_a: &[(f32, f32)], pts_b: &[(f32, f32)], h: &Homography, tol: f64) -> Vec<(usize, usize, f64)> {
    use std::collections::HashMap;
    let inv = h.inverse();
    let cell = tol.max(1e-6);
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, &(x, y)) in pts_b.iter().enumerate() {
        grid.entry(key(x as f64, y as f64)).or_default().push(j);
    }
    let mut edges = Vec::new();
    for (i, &a) in pts_a.iter().enumerate() {
        let Some((px, py)) = h.apply(a.0 as f64, a.1 as f64) else { continue };
        let (cx, cy) = key(px, py);
        let start = edges.len();
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                for &j in grid.get(&(gx, gy)).into_iter().flatten() {
                    let d = pair_distance(a, pts_b[j], h, &inv);
                    if d <= tol {
                        edges.push((i, j, d));
                    }
                }
            }
        }
        edges[start..].sort_by(|x, y| x.2.total_cmp(&y.2).then(x.1.cmp(&y.1)));
    }
    edges
}

fn greedy_assignment(n_a: usize, n_b: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<(usize, usize)> {
    edges.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let (mut used_a, mut used_b) = (vec![false; n_a], vec![false; n_b]);
    let mut out = Vec::new();
    for (i, j, _) in edges {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Kuhn's augmenting paths; neighbours are tried closest first.
fn optimal_assignment(n_a: usize, n_b: usize, edges: &[(usize, usize, f64)]) -> Vec<(usize, usize)> {
    let mut adj = vec![Vec::new(); n_a];
    for &(i, j, _) in edges {
        adj[i].push(j);
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_b];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].map_or(true, |k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut seen = vec![false; n_b];
    for i in 0..n_a {
        if adj[i].is_empty() {
            continue;
        }
        seen.fill(false);
        augment(i, &adj, &mut seen, &mut owner);
    }
    let mut out: Vec<(usize, usize)> = owner.iter().enumerate().filter_map(|(j, o)| o.map(|i| (i, j))).collect();
    out.sort_unstable();
    out
}

/// One-to-one geometric correspondences within `tol` pixels.
pub fn possible_matches(
    pts_a: &[(f32, f32)],
    pts_b: &[(f32, f32)],
    h: &Homography,
    tol: f64,
    rule: Assignment,
) -> Vec<(usize, usize)> {
    let edges = candidate_edges(pts_a, pts_b, h, tol);
    match rule {
        Assignment::Optimal => optimal_assignment(pts_a.len(), pts_b.len(), &edges),
        Assignment::Greedy => greedy_assignment(pts_a.len(), pts_b.len(), edges),
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// `100 * possible / min(|A|, |B|)` over already shared-view-filtered points.
pub fn repeatability(pts_a: &[(f32, f32)], pts_b: &[(f32, f32)], h: &Homography, tol: f64, rule: Assignment) -> f64 {
    let possible = possible_matches(pts_a, pts_b, h, tol, rule).len();
    percent(possible, pts_a.len().min(pts_b.len()))
}

/// Descriptor match `i` in A to `j` in B with cosine similarity `sim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub sim: f64,
}

/// Index of the first maximum.
fn argmax(it: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in it.enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Rows rescaled to unit length in f64; all-zero rows stay zero.
fn unit_rows(d: &DescriptorSet) -> Vec<Vec<f64>> {
    (0..d.len())
        .map(|i| {
            let row: Vec<f64> = d.row(i).iter().map(|&v| v as f64).collect();
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter().map(|v| v / n).collect()
            } else {
                row
            }
        })
        .collect()
}

/// Mutual nearest neighbours by cosine similarity; ties go to the lower index.
///
/// Cosines are taken on rows renormalised in f64: f32 unit vectors carry
/// enough rounding that two nearly parallel descriptors can out-score a
/// descriptor's similarity with itself.
pub fn mutual_nn_match(a: &DescriptorSet, b: &DescriptorSet) -> Vec<Match> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || a.dim != b.dim {
        return Vec::new();
    }
    let (ua, ub) = (unit_rows(a), unit_rows(b));
    let mut sim = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            sim[i * m + j] = ua[i].iter().zip(&ub[j]).map(|(x, y)| x * y).sum();
        }
    }
    let row_best: Vec<usize> = (0..n).map(|i| argmax(sim[i * m..(i + 1) * m].iter().copied()).unwrap()).collect();
    let col_best: Vec<usize> = (0..m).map(|j| argmax((0..n).map(|i| sim[i * m + j])).unwrap()).collect();
    (0..n)
        .filter(|&i| col_best[row_best[i]] == i)
        .map(|i| Match {
            i,
            j: row_best[i],
            sim: sim[i * m + row_best[i]],
        })
        .collect()
}

/// Matched pairs within `tol` pixels of each other.
pub fn correct_matches(matches: &[Match], pts_a: &[(f32, f32)], pts_b: &[(f32, f32)], h: &Homography, tol: f64) -> usize {
    let inv = h.inverse();
    matches
        .iter()
        .filter(|m| pair_distance(pts_a[m.i], pts_b[m.j], h, &inv) <= tol)
        .count()
}

/// `(M.S., MMA)` in percent: correct matches over the smaller set and over `possible`.
pub fn matching_score_and_mma(
    matches: &[Match],
    pts_a: &[(f32, f32)],
    pts_b: &[(f32, f32)],
    h: &Homography,
    tol: f64,
    possible: usize,
) -> (f64, f64) {
    let correct = correct_matches(matches, pts_a, pts_b, h, tol);
    (percent(correct, pts_a.len().min(pts_b.len())), percent(correct, possible))
}
