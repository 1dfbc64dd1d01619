//! Keypoint sets and the `sobelkey kpts v1` text format.
//!
//! ```text
//! # sobelkey kpts v1 <W> <H>
//! <x> <y> <score>        one line per keypoint, six decimals each
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub score: f32,
}

/// Keypoints of one image, sorted by descending score.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Keypoint>,
}

const HEADER: &str = "# sobelkey kpts v1";

impl KeypointSet {
    pub fn new(width: usize, height: usize, mut points: Vec<Keypoint>) -> Self {
        sort_points(&mut points);
        KeypointSet { width, height, points }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        KeypointSet {
            width,
            height,
            points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn truncate(&mut self, max: usize) {
        self.points.truncate(max);
    }

    pub fn coords(&self) -> Vec<(f32, f32)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER} {} {}\n", self.width, self.height);
        for p in &self.points {
            let _ = writeln!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.score);
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::format(origin, format!("line {line}: {detail}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let rest = header
            .strip_prefix(HEADER)
            .ok_or_else(|| bad(1, format!("expected `{HEADER} W H` header")))?;
        let dims: Vec<&str> = rest.split_whitespace().collect();
        let [w, h] = dims.as_slice() else {
            return Err(bad(1, "header must carry image width and height".into()));
        };
        let width: usize = w.parse().map_err(|_| bad(1, format!("bad width `{w}`")))?;
        let height: usize = h.parse().map_err(|_| bad(1, format!("bad height `{h}`")))?;
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f32> = line
                .split_whitespace()
                .map(|t| t.parse::<f32>().map_err(|_| bad(n, format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            let [x, y, score] = vals.as_slice() else {
                return Err(bad(n, format!("expected 3 fields, found {}", vals.len())));
            };
            points.push(Keypoint {
                x: *x,
                y: *y,
                score: *score,
            });
        }
        Ok(KeypointSet { width, height, points })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Descending score; equal scores fall back to `(y, x)` order.
pub(crate) fn sort_points(points: &mut [Keypoint]) {
    points.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
}
