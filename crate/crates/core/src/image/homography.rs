use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

/// Smallest |det| accepted as invertible.
const MIN_DET: f64 = 1e-9;

/// Projective map between pixel-centre coordinates, stored with `h33 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// Validates invertibility and normalises `h33` to 1.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("homography has non-finite entries".into()));
        }
        let m = if m[(2, 2)].abs() > 1e-12 { m / m[(2, 2)] } else { m };
        let det = m.determinant();
        if det.abs() <= MIN_DET {
            return Err(Error::SingularHomography { det });
        }
        Ok(Homography(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` radians about `(cx, cy)` (counter-clockwise in a y-down frame
    /// this is clockwise on screen).
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Homography(Self::translation(cx, cy).0 * r * Self::translation(-cx, -cy).0)
    }

    pub fn scale_about(scale: f64, cx: f64, cy: f64) -> Self {
        let s = Matrix3::new(scale, 0.0, 0.0, 0.0, scale, 0.0, 0.0, 0.0, 1.0);
        Homography(Self::translation(cx, cy).0 * s * Self::translation(-cx, -cy).0)
    }

    /// The homography taking each `src[i]` to `dst[i]` (4-point DLT).
    pub fn from_correspondences(src: [(f64, f64); 4], dst: [(f64, f64); 4]) -> Result<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let (x, y) = src[i];
            let (u, v) = dst[i];
            let r = 2 * i;
            a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or(Error::SingularHomography { det: 0.0 })?;
        Self::new(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
    }

    pub fn inverse(&self) -> Self {
        let inv = self.0.try_inverse().expect("invertibility checked at construction");
        let inv = if inv[(2, 2)].abs() > 1e-12 { inv / inv[(2, 2)] } else { inv };
        Homography(inv)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &Homography) -> Result<Self> {
        Self::new(self.0 * first.0)
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.0 * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            return None;
        }
        Some((p.x / p.z, p.y / p.z))
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.0 - other.0).iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}
