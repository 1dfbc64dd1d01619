//! Bilinear resampling shared by the tape and the classical image ops.

/// Source taps for one output index: `(lo, hi, frac)` with value
/// `src[lo] * (1 - frac) + src[hi] * frac`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f32,
}

/// Half-pixel-centre (align-corners-false) taps, clamped at the borders.
pub(crate) fn axis_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if lo == hi { 0.0 } else { (src - lo as f64) as f32 };
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Resizes one `h x w` plane to `oh x ow`.
pub(crate) fn resize_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize, dst: &mut [f32]) {
    if oh == h && ow == w {
        dst.copy_from_slice(src);
        return;
    }
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    for (oy, t) in ty.iter().enumerate() {
        let r0 = &src[t.lo * w..(t.lo + 1) * w];
        let r1 = &src[t.hi * w..(t.hi + 1) * w];
        let out = &mut dst[oy * ow..(oy + 1) * ow];
        for (ox, s) in tx.iter().enumerate() {
            let top = r0[s.lo] + (r0[s.hi] - r0[s.lo]) * s.frac;
            let bot = r1[s.lo] + (r1[s.hi] - r1[s.lo]) * s.frac;
            out[ox] = top + (bot - top) * t.frac;
        }
    }
}

/// Adjoint of [`resize_plane`]: accumulates `grad_dst` into `grad_src`.
pub(crate) fn resize_plane_adjoint(
    grad_dst: &[f32],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    grad_src: &mut [f32],
) {
    if oh == h && ow == w {
        for (a, b) in grad_src.iter_mut().zip(grad_dst) {
            *a += *b;
        }
        return;
    }
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    for (oy, t) in ty.iter().enumerate() {
        let g_row = &grad_dst[oy * ow..(oy + 1) * ow];
        for (ox, s) in tx.iter().enumerate() {
            let g = g_row[ox];
            let (wy0, wy1) = (1.0 - t.frac, t.frac);
            let (wx0, wx1) = (1.0 - s.frac, s.frac);
            grad_src[t.lo * w + s.lo] += g * wy0 * wx0;
            grad_src[t.lo * w + s.hi] += g * wy0 * wx1;
            grad_src[t.hi * w + s.lo] += g * wy1 * wx0;
            grad_src[t.hi * w + s.hi] += g * wy1 * wx1;
        }
    }
}

/// Corner indices and weights for sampling a plane at a real coordinate
/// on the pixel-centre grid. Caller guarantees `0 <= x <= w-1`, `0 <= y <= h-1`.
pub(crate) fn point_taps(x: f32, y: f32, w: usize, h: usize) -> [(usize, f32); 4] {
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}
