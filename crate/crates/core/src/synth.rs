//! Synthetic training and benchmark images: random polygons, checkerboard
//! patches and line segments over a shaded background, anti-aliased by 3x3
//! supersampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{sobel_magnitude, GrayImage, Plane};

/// Smallest side accepted by the generator.
pub const SYNTH_MIN_SIDE: usize = 64;

/// Strong-edge pixels (Sobel above half its max) every image must have.
pub const MIN_STRONG_EDGES: usize = 20;

enum Shape {
    Polygon { pts: Vec<(f64, f64)>, value: f32 },
    Checker { cx: f64, cy: f64, cos: f64, sin: f64, half: f64, cell: f64, a: f32, b: f32 },
    Line { x0: f64, y0: f64, x1: f64, y1: f64, half_width: f64, value: f32 },
}

impl Shape {
    fn sample(&self, x: f64, y: f64) -> Option<f32> {
        match self {
            Shape::Polygon { pts, value } => point_in_polygon(pts, x, y).then_some(*value),
            Shape::Checker {
                cx,
                cy,
                cos,
                sin,
                half,
                cell,
                a,
                b,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                if u.abs() > *half || v.abs() > *half {
                    return None;
                }
                let parity = (((u + half) / cell).floor() as i64 + ((v + half) / cell).floor() as i64) & 1;
                Some(if parity == 0 { *a } else { *b })
            }
            Shape::Line {
                x0,
                y0,
                x1,
                y1,
                half_width,
                value,
            } => {
                let (ex, ey) = (x1 - x0, y1 - y0);
                let len2 = ex * ex + ey * ey;
                let t = if len2 > 0.0 {
                    (((x - x0) * ex + (y - y0) * ey) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (x0 + t * ex - x, y0 + t * ey - y);
                (px * px + py * py <= half_width * half_width).then_some(*value)
            }
        }
    }
}

fn point_in_polygon(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// A contrasting gray value: at least 0.25 away from `base`.
fn contrasting(rng: &mut ChaCha8Rng, base: f32) -> f32 {
    loop {
        let v: f32 = rng.gen_range(0.0..1.0);
        if (v - base).abs() >= 0.25 {
            return v;
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, w: f64, h: f64, base: f32) -> Shape {
    let side = w.min(h);
    match rng.gen_range(0..3) {
        0 => {
            let (cx, cy) = (rng.gen_range(0.1 * w..0.9 * w), rng.gen_range(0.1 * h..0.9 * h));
            let n = rng.gen_range(3..=6);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let pts = angles
                .iter()
                .map(|a| {
                    let r = rng.gen_range(0.08 * side..0.3 * side);
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect();
            Shape::Polygon {
                pts,
                value: contrasting(rng, base),
            }
        }
        1 => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let a = contrasting(rng, base);
            Shape::Checker {
                cx: rng.gen_range(0.2 * w..0.8 * w),
                cy: rng.gen_range(0.2 * h..0.8 * h),
                cos: angle.cos(),
                sin: angle.sin(),
                half: rng.gen_range(0.1 * side..0.25 * side),
                cell: rng.gen_range(0.05 * side..0.12 * side).max(4.0),
                a,
                b: contrasting(rng, a),
            }
        }
        _ => Shape::Line {
            x0: rng.gen_range(0.0..w),
            y0: rng.gen_range(0.0..h),
            x1: rng.gen_range(0.0..w),
            y1: rng.gen_range(0.0..h),
            half_width: rng.gen_range(0.5..1.5),
            value: contrasting(rng, base),
        },
    }
}

fn render(width: usize, height: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let (w, h) = (width as f64, height as f64);
    // background: linear shade in about [0.2, 0.8]
    let base: f32 = rng.gen_range(0.3..0.7);
    let gx: f32 = rng.gen_range(-0.2..0.2);
    let gy: f32 = rng.gen_range(-0.2..0.2);
    let count = rng.gen_range(3..=10);
    let shapes: Vec<Shape> = (0..count).map(|_| random_shape(rng, w, h, base)).collect();
    const SUB: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
    let plane = Plane::from_fn(width, height, |x, y| {
        let bg = base + gx * (x as f32 / width as f32 - 0.5) + gy * (y as f32 / height as f32 - 0.5);
        let mut acc = 0.0f32;
        for sy in SUB {
            for sx in SUB {
                let (px, py) = (x as f64 + sx, y as f64 + sy);
                let mut v = bg;
                for s in &shapes {
                    if let Some(c) = s.sample(px, py) {
                        v = c;
                    }
                }
                acc += v;
            }
        }
        acc / 9.0
    });
    GrayImage::from_plane_clamped(plane)
}

fn strong_edges(img: &GrayImage) -> usize {
    let e = sobel_magnitude(img);
    let cut = 0.5 * e.max();
    if !(cut > 0.0) {
        return 0;
    }
    e.data().iter().filter(|&&v| v > cut).count()
}

/// Seed of image `index` in a dataset drawn with `seed`.
pub fn image_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

/// Image `index` of the synthetic dataset `seed`; independent of other indices.
pub fn synth_image(width: usize, height: usize, seed: u64, index: u64) -> Result<GrayImage> {
    if width.min(height) < SYNTH_MIN_SIDE {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: SYNTH_MIN_SIDE,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, index));
    // redraw until the self-check passes; in practice the first draw does
    for _ in 0..100 {
        let img = render(width, height, &mut rng);
        if strong_edges(&img) >= MIN_STRONG_EDGES {
            return Ok(img);
        }
    }
    Err(Error::Degenerate(format!("synthetic image {index} failed the edge self-check")))
}

pub fn synth_dataset(n: usize, width: usize, height: usize, seed: u64) -> Result<Vec<GrayImage>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    (0..n as u64).map(|i| synth_image(width, height, seed, i)).collect()
}
