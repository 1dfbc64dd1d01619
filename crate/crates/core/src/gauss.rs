//! Gaussian score, corner-point maps and the Gaussian detector loss.
//!
//! Every window sum uses replicate padding so the kernel stays centred on the
//! pixel being scored, borders included.

use crate::detector::local_maxima;
use crate::error::{Error, Result};
use crate::image::{warp_map, BinaryMap, EdgeMap, Homography, Plane};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

/// Square Gaussian window of half-width `radius`, centre weight exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    radius: usize,
    sigma: f64,
    /// 1-D profile `g(d)` for `d in -r..=r`; the 2-D weight is `g(dx) * g(dy)`.
    axis: Vec<f64>,
}

impl GaussianKernel {
    /// Kernel with `sigma = radius / 2`.
    pub fn new(radius: usize) -> Result<Self> {
        Self::with_sigma(radius, radius as f64 / 2.0)
    }

    pub fn with_sigma(radius: usize, sigma: f64) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidArgument("Gaussian kernel radius must be at least 1".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("Gaussian kernel sigma {sigma} must be positive")));
        }
        let r = radius as isize;
        let axis = (-r..=r)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        Ok(GaussianKernel { radius, sigma, axis })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Side length `2r + 1`.
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Weight at offset `(dx, dy)` from the centre.
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        assert!(dx.abs() <= r && dy.abs() <= r, "offset outside kernel");
        self.axis[(dx + r) as usize] * self.axis[(dy + r) as usize]
    }

    /// Row-major `(2r+1)^2` weights.
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size() * self.size());
        for gy in &self.axis {
            for gx in &self.axis {
                out.push(gx * gy);
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        let s: f64 = self.axis.iter().sum();
        s * s
    }

    /// Weighted window sum around `(x, y)` with replicate padding.
    fn window_sum(&self, p: &Plane, x: usize, y: usize) -> f64 {
        let r = self.radius as isize;
        let (w, h) = (p.width() as isize, p.height() as isize);
        let mut total = 0.0;
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            let row = &p.data()[yy * p.width()..(yy + 1) * p.width()];
            let mut acc = 0.0;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w - 1) as usize;
                acc += self.axis[(dx + r) as usize] * row[xx] as f64;
            }
            total += self.axis[(dy + r) as usize] * acc;
        }
        total
    }

    /// Adjoint of [`window_sum`](Self::window_sum): adds `s * weight` to every tap.
    fn scatter(&self, grad: &mut [f64], width: usize, height: usize, x: usize, y: usize, s: f64) {
        let r = self.radius as isize;
        let (w, h) = (width as isize, height as isize);
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            let sy = s * self.axis[(dy + r) as usize];
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w - 1) as usize;
                grad[yy * width + xx] += sy * self.axis[(dx + r) as usize];
            }
        }
    }
}

/// Row-then-column weighted window sums of the whole map, replicate-padded.
fn window_sums(p: &Plane, k: &GaussianKernel) -> Vec<f64> {
    let (w, h) = (p.width(), p.height());
    let r = k.radius as isize;
    let mut rows = vec![0.0f64; w * h];
    for y in 0..h {
        let src = &p.data()[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += k.axis[(dx + r) as usize] * src[xx] as f64;
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let g = k.axis[(dy + r) as usize];
            for x in 0..w {
                out[y * w + x] += g * rows[yy * w + x];
            }
        }
    }
    out
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eps {eps} must be positive")))
    }
}

/// Per-pixel `p_c^2 / (sum_R w_i p_i + eps)`.
pub fn gauss_score_map(p: &Plane, k: &GaussianKernel, eps: f64) -> Result<Plane> {
    check_eps(eps)?;
    let sums = window_sums(p, k);
    let data = p
        .data()
        .iter()
        .zip(&sums)
        .map(|(&v, &s)| {
            let v = v as f64;
            (v * v / (s + eps)) as f32
        })
        .collect();
    Plane::new(p.width(), p.height(), data)
}

/// Pixels whose edge strength exceeds `alpha * max`.
pub fn edge_mask(edges: &EdgeMap, alpha: f32) -> Result<BinaryMap> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("edge mask alpha {alpha} outside (0, 1)")));
    }
    let max = edges.max();
    if !(max > 0.0) {
        return Ok(BinaryMap::filled(edges.width(), edges.height(), false));
    }
    let cut = alpha * max;
    let data = edges.data().iter().map(|&v| v > cut).collect();
    BinaryMap::new(edges.width(), edges.height(), data)
}

/// NMS maxima of the Gauss score map, gated by `mask`.
pub fn corner_point_map(gs: &Plane, mask: &BinaryMap, nms_radius: usize) -> Result<BinaryMap> {
    if gs.width() != mask.width() || gs.height() != mask.height() {
        return Err(Error::shape(
            "corner point map",
            format!(
                "score {}x{} vs mask {}x{}",
                gs.width(),
                gs.height(),
                mask.width(),
                mask.height()
            ),
        ));
    }
    if nms_radius == 0 {
        return Err(Error::InvalidArgument("NMS radius must be at least 1".into()));
    }
    let mut out = BinaryMap::filled(gs.width(), gs.height(), false);
    for (x, y, _) in local_maxima(gs, nms_radius) {
        if mask.get(x, y) {
            out.set(x, y, true);
        }
    }
    Ok(out)
}

/// Per-point terms shared by the loss value and its gradient.
struct ActiveTerms {
    index: Vec<usize>,
    p: Vec<f64>,
    denom: Vec<f64>,
    /// Centre ratio `p / (S + eps)`.
    ratio: Vec<f64>,
    /// Gauss score `p^2 / (S + eps)`.
    score: Vec<f64>,
    norm: f64,
    loss: f64,
}

fn active_terms(p: &Plane, cmap: &BinaryMap, k: &GaussianKernel, eps: f64) -> Result<ActiveTerms> {
    check_eps(eps)?;
    if p.width() != cmap.width() || p.height() != cmap.height() {
        return Err(Error::shape("gauss loss", "score map and corner map sizes differ"));
    }
    let w = p.width();
    let index = cmap.ones();
    let mut t = ActiveTerms {
        p: Vec::with_capacity(index.len()),
        denom: Vec::with_capacity(index.len()),
        ratio: Vec::with_capacity(index.len()),
        score: Vec::with_capacity(index.len()),
        index,
        norm: 0.0,
        loss: 0.0,
    };
    for &i in &t.index {
        let v = p.data()[i] as f64;
        let d = k.window_sum(p, i % w, i / w) + eps;
        t.p.push(v);
        t.denom.push(d);
        t.ratio.push(v / d);
        t.score.push(v * v / d);
    }
    if t.index.is_empty() {
        return Ok(t);
    }
    t.norm = t.score.iter().sum::<f64>() + eps;
    t.loss = t
        .ratio
        .iter()
        .zip(&t.score)
        .map(|(a, g)| (1.0 - a) * g)
        .sum::<f64>()
        / t.norm;
    Ok(t)
}

/// Score-weighted mean of `1 - centre ratio` over the active pixels of `cmap`.
pub fn gauss_loss(p: &Plane, cmap: &BinaryMap, k: &GaussianKernel, eps: f64) -> Result<f64> {
    Ok(active_terms(p, cmap, k, eps)?.loss)
}

/// `d loss / d p` for [`gauss_loss`], dense over the map.
pub fn gauss_loss_grad(p: &Plane, cmap: &BinaryMap, k: &GaussianKernel, eps: f64) -> Result<(f64, Vec<f64>)> {
    let t = active_terms(p, cmap, k, eps)?;
    let (w, h) = (p.width(), p.height());
    let mut grad = vec![0.0f64; w * h];
    for j in 0..t.index.len() {
        let (pi, d) = (t.p[j], t.denom[j]);
        let d_ratio = -t.score[j] / t.norm;
        let d_score = (1.0 - t.ratio[j] - t.loss) / t.norm;
        let i = t.index[j];
        grad[i] += d_ratio / d + 2.0 * d_score * pi / d;
        let d_denom = -(d_ratio * pi + d_score * pi * pi) / (d * d);
        k.scatter(&mut grad, w, h, i % w, i / w, d_denom);
    }
    Ok((t.loss, grad))
}

struct GaussLossOp {
    width: usize,
    height: usize,
    cmap: BinaryMap,
    kernel: GaussianKernel,
    eps: f64,
}

impl CustomOp for GaussLossOp {
    fn name(&self) -> &'static str {
        "gauss_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let p = Plane::new(self.width, self.height, inputs[0].data().to_vec()).expect("shape checked at record time");
        let (_, grad) = gauss_loss_grad(&p, &self.cmap, &self.kernel, self.eps).expect("validated at record time");
        let up = grad_out.data()[0] as f64;
        let data = grad.iter().map(|g| (g * up) as f32).collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), data).expect("sized"))]
    }
}

fn plane_of(g: &Graph, v: Var, op: &'static str) -> Result<Plane> {
    let t = g.value(v);
    let [n, c, h, w] = t.dims4(op)?;
    if n != 1 || c != 1 {
        return Err(Error::shape(op, format!("expected a [1, 1, H, W] map, got {:?}", t.shape())));
    }
    Plane::new(w, h, t.data().to_vec())
}

/// Records [`gauss_loss`] on a `[1, 1, H, W]` score map; `cmap` is a constant target.
pub fn gauss_loss_var(g: &mut Graph, p: Var, cmap: &BinaryMap, k: &GaussianKernel, eps: f64) -> Result<Var> {
    let plane = plane_of(g, p, "gauss_loss")?;
    let loss = gauss_loss(&plane, cmap, k, eps)?;
    let op = GaussLossOp {
        width: plane.width(),
        height: plane.height(),
        cmap: cmap.clone(),
        kernel: k.clone(),
        eps,
    };
    g.custom(&[p], Tensor::scalar(loss as f32), Box::new(op))
}

/// Settings of the multi-scale cross-warp objective.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossWarpConfig {
    pub radii: Vec<usize>,
    /// Edge-mask threshold ratio.
    pub alpha: f32,
    pub eps: f64,
    /// Corner-map NMS radius; `None` uses `round(r / 2)` per kernel.
    pub nms_radius: Option<usize>,
}

impl Default for CrossWarpConfig {
    fn default() -> Self {
        CrossWarpConfig {
            radii: vec![4, 6, 8],
            alpha: 0.1,
            eps: 1e-8,
            nms_radius: None,
        }
    }
}

impl CrossWarpConfig {
    pub fn nms_radius_for(&self, r: usize) -> usize {
        self.nms_radius.unwrap_or(((r as f64) / 2.0).round() as usize).max(1)
    }
}

/// Loss terms of one kernel radius.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleLoss {
    pub radius: usize,
    /// Loss on the original map over `R1`.
    pub osp: f64,
    /// Loss on the transformed map over `R2`.
    pub tsp: f64,
    /// `|R1|`: corner points of the warped transformed map, original frame.
    pub active_orig: usize,
    /// `|R2|`: corner points of the warped original map, transformed frame.
    pub active_trans: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub scales: Vec<ScaleLoss>,
}

impl LossBreakdown {
    /// CSV header fragment matching [`csv_values`](Self::csv_values).
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["total".to_string()];
        for s in &self.scales {
            let r = s.radius;
            cols.extend([
                format!("gl_osp_{r}"),
                format!("gl_tsp_{r}"),
                format!("r1_{r}"),
                format!("r2_{r}"),
            ]);
        }
        cols.join(",")
    }

    pub fn csv_values(&self) -> String {
        let mut cols = vec![format!("{:.8}", self.total)];
        for s in &self.scales {
            cols.extend([
                format!("{:.8}", s.osp),
                format!("{:.8}", s.tsp),
                s.active_orig.to_string(),
                s.active_trans.to_string(),
            ]);
        }
        cols.join(",")
    }
}

/// Edge inputs for [`cross_warp_targets`].
pub struct CrossWarpInputs<'a> {
    pub osp: &'a Plane,
    pub tsp: &'a Plane,
    /// Takes original-frame coordinates to transformed-frame coordinates.
    pub homography: &'a Homography,
    pub sobel_orig: &'a EdgeMap,
    pub sobel_trans: &'a EdgeMap,
}

/// Corner-point targets for one radius: `r1` lives in the original frame, `r2` in the transformed one.
#[derive(Clone, Debug, PartialEq)]
pub struct CornerTargets {
    pub radius: usize,
    pub r1: BinaryMap,
    pub r2: BinaryMap,
}

/// Builds `R1` from the transformed map warped back, and `R2` from the original map warped forward.
pub fn cross_warp_targets(inputs: &CrossWarpInputs<'_>, cfg: &CrossWarpConfig) -> Result<Vec<CornerTargets>> {
    let CrossWarpInputs {
        osp,
        tsp,
        homography,
        sobel_orig,
        sobel_trans,
    } = *inputs;
    if !osp.same_size(tsp) || !osp.same_size(sobel_orig) || !tsp.same_size(sobel_trans) {
        return Err(Error::shape("cross warp loss", "score and edge maps must share one size"));
    }
    if cfg.radii.is_empty() {
        return Err(Error::InvalidArgument("at least one kernel radius is required".into()));
    }
    let (w, h) = (osp.width(), osp.height());
    let inverse = Homography::new(*homography.matrix())?.inverse();
    let osp_t = warp_map(osp, homography, w, h)?;
    let tsp_t = warp_map(tsp, &inverse, w, h)?;
    let mask_orig = edge_mask(sobel_orig, cfg.alpha)?.and(&tsp_t.valid)?;
    let mask_trans = edge_mask(sobel_trans, cfg.alpha)?.and(&osp_t.valid)?;
    cfg.radii
        .iter()
        .map(|&r| {
            let k = GaussianKernel::new(r)?;
            let nms = cfg.nms_radius_for(r);
            let r1 = corner_point_map(&gauss_score_map(&tsp_t.values, &k, cfg.eps)?, &mask_orig, nms)?;
            let r2 = corner_point_map(&gauss_score_map(&osp_t.values, &k, cfg.eps)?, &mask_trans, nms)?;
            Ok(CornerTargets { radius: r, r1, r2 })
        })
        .collect()
}

/// Multi-scale cross-warp loss value.
pub fn cross_warp_loss(inputs: &CrossWarpInputs<'_>, cfg: &CrossWarpConfig) -> Result<LossBreakdown> {
    let targets = cross_warp_targets(inputs, cfg)?;
    let mut scales = Vec::with_capacity(targets.len());
    for t in &targets {
        let k = GaussianKernel::new(t.radius)?;
        scales.push(ScaleLoss {
            radius: t.radius,
            osp: gauss_loss(inputs.osp, &t.r1, &k, cfg.eps)?,
            tsp: gauss_loss(inputs.tsp, &t.r2, &k, cfg.eps)?,
            active_orig: t.r1.count(),
            active_trans: t.r2.count(),
        });
    }
    Ok(breakdown(scales))
}

fn breakdown(scales: Vec<ScaleLoss>) -> LossBreakdown {
    let total = scales.iter().map(|s| s.osp + s.tsp).sum();
    LossBreakdown { total, scales }
}

/// Records the cross-warp loss on two `[1, 1, H, W]` score maps.
pub fn cross_warp_loss_var(
    g: &mut Graph,
    osp: Var,
    tsp: Var,
    homography: &Homography,
    sobel_orig: &EdgeMap,
    sobel_trans: &EdgeMap,
    cfg: &CrossWarpConfig,
) -> Result<(Var, LossBreakdown)> {
    let osp_plane = plane_of(g, osp, "cross_warp_loss")?;
    let tsp_plane = plane_of(g, tsp, "cross_warp_loss")?;
    let inputs = CrossWarpInputs {
        osp: &osp_plane,
        tsp: &tsp_plane,
        homography,
        sobel_orig,
        sobel_trans,
    };
    let targets = cross_warp_targets(&inputs, cfg)?;
    let mut scales = Vec::with_capacity(targets.len());
    let mut total: Option<Var> = None;
    for t in &targets {
        let k = GaussianKernel::new(t.radius)?;
        let lo = gauss_loss_var(g, osp, &t.r1, &k, cfg.eps)?;
        let lt = gauss_loss_var(g, tsp, &t.r2, &k, cfg.eps)?;
        scales.push(ScaleLoss {
            radius: t.radius,
            osp: g.value(lo).data()[0] as f64,
            tsp: g.value(lt).data()[0] as f64,
            active_orig: t.r1.count(),
            active_trans: t.r2.count(),
        });
        let pair = g.add(lo, lt)?;
        total = Some(match total {
            None => pair,
            Some(acc) => g.add(acc, pair)?,
        });
    }
    Ok((total.expect("radii checked non-empty"), breakdown(scales)))
}
