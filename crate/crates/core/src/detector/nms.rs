use crate::image::Plane;

/// Separable sliding-window maximum over a `(2r+1)^2` window (clipped at borders).
fn window_max(map: &Plane, radius: usize) -> Plane {
    let (w, h) = (map.width(), map.height());
    let mut rows = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let m = (lo..=hi).map(|xx| map.get(xx, y)).fold(f32::NEG_INFINITY, f32::max);
            rows.set(x, y, m);
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let m = (lo..=hi).map(|yy| rows.get(x, yy)).fold(f32::NEG_INFINITY, f32::max);
            out.set(x, y, m);
        }
    }
    out
}

/// Strict local maxima of `map` within a `(2r+1)^2` window.
///
/// A pixel survives when its value is positive and, for every other pixel in
/// its window, it is either strictly larger or equal and earlier in `(y, x)`
/// order. Returned as `(x, y, value)` in row-major order.
pub fn local_maxima(map: &Plane, radius: usize) -> Vec<(usize, usize, f32)> {
    let (w, h) = (map.width(), map.height());
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let wmax = window_max(map, radius);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = map.get(x, y);
            if !(v > 0.0) || v < wmax.get(x, y) {
                continue;
            }
            // v is the window max; only a tie that comes earlier can beat it
            let mut wins = true;
            'scan: for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    if (yy, xx) >= (y, x) {
                        break 'scan;
                    }
                    if map.get(xx, yy) == v {
                        wins = false;
                        break 'scan;
                    }
                }
            }
            if wins {
                out.push((x, y, v));
            }
        }
    }
    out
}
