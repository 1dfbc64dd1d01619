use super::{BinaryMap, Homography, Plane};
use crate::error::Result;
use crate::tensor::resample::point_taps;

/// Output of [`warp_map`]: resampled values plus the source-validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Warped {
    pub values: Plane,
    pub valid: BinaryMap,
}

const EDGE_SLACK: f64 = 1e-9;

/// Inverse-maps every output pixel through `h^-1` and samples `map` bilinearly.
///
/// `h` takes source coordinates to output coordinates. Output pixels whose
/// source position falls outside `[0, w-1] x [0, h-1]` are 0 and marked invalid.
pub fn warp_map(map: &Plane, h: &Homography, out_w: usize, out_h: usize) -> Result<Warped> {
    // re-validate: callers may hand us a matrix built elsewhere
    let h = Homography::new(*h.matrix())?;
    let inv = h.inverse();
    let (sw, sh) = (map.width(), map.height());
    let mut values = Plane::zeros(out_w, out_h);
    let mut valid = BinaryMap::filled(out_w, out_h, false);
    for y in 0..out_h {
        for x in 0..out_w {
            let Some((sx, sy)) = inv.apply(x as f64, y as f64) else { continue };
            if sx < -EDGE_SLACK || sy < -EDGE_SLACK || sx > (sw - 1) as f64 + EDGE_SLACK || sy > (sh - 1) as f64 + EDGE_SLACK {
                continue;
            }
            let sx = sx.clamp(0.0, (sw - 1) as f64) as f32;
            let sy = sy.clamp(0.0, (sh - 1) as f64) as f32;
            let v: f32 = point_taps(sx, sy, sw, sh)
                .iter()
                .map(|&(i, wt)| if wt == 0.0 { 0.0 } else { map.data()[i] * wt })
                .sum();
            values.set(x, y, v);
            valid.set(x, y, true);
        }
    }
    Ok(Warped { values, valid })
}
