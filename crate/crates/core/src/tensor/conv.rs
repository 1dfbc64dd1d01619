//! im2col + GEMM convolution with zero padding.

use super::Tensor;
use crate::error::{Error, Result};

/// Output extent along one axis, or `None` when the window does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, w] = input.dims4("conv2d")?;
        let [cout, wcin, kh, kw] = weight.dims4("conv2d")?;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match {cout} output channels", bias.shape()),
            ));
        }
        if n == 0 || cin == 0 || h == 0 || w == 0 || cout == 0 {
            return Err(Error::shape("conv2d", "all extents must be positive"));
        }
        let ho = conv_output_extent(h, kh, stride, pad)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kh} does not fit height {h}")))?;
        let wo = conv_output_extent(w, kw, stride, pad)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kw} does not fit width {w}")))?;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Column index range `[lo, hi)` of output positions whose source
    /// coordinate `o * stride + tap - pad` lands inside `[0, len)`.
    fn valid_range(out: usize, len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
        // need o*stride + tap >= pad and o*stride + tap - pad < len
        let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
        let limit = len as isize + pad as isize - tap as isize; // o*stride < limit
        let hi = if limit <= 0 {
            0
        } else {
            ((limit as usize - 1) / stride + 1).min(out)
        };
        (lo.min(hi), hi)
    }

    /// Output rows per im2col block, sized so a block stays cache resident.
    fn block_rows(&self) -> usize {
        const TARGET: usize = 1 << 17; // floats per column block
        (TARGET / (self.rows() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Unfolds output rows `oy0..oy1` of one image into a
    /// `[cin*k*k, (oy1-oy0)*wo]` matrix.
    fn im2col(&self, image: &[f32], oy0: usize, oy1: usize, col: &mut [f32]) {
        let cols = (oy1 - oy0) * self.wo;
        col[..self.rows() * cols].fill(0.0);
        for c in 0..self.cin {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (vy_lo, vy_hi) = Self::valid_range(self.ho, self.h, ky, self.stride, self.pad);
                let (oy_lo, oy_hi) = (vy_lo.max(oy0), vy_hi.min(oy1));
                for kx in 0..self.k {
                    let (ox_lo, ox_hi) = Self::valid_range(self.wo, self.w, kx, self.stride, self.pad);
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.pad;
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        let dst_row = &mut dst[(oy - oy0) * self.wo..(oy - oy0 + 1) * self.wo];
                        if self.stride == 1 {
                            let ix0 = ox_lo + kx - self.pad;
                            let len = ox_hi - ox_lo;
                            dst_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + len]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst_row[ox] = src_row[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back onto the image.
    fn col2im(&self, col: &[f32], oy0: usize, oy1: usize, image: &mut [f32]) {
        let cols = (oy1 - oy0) * self.wo;
        for c in 0..self.cin {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (vy_lo, vy_hi) = Self::valid_range(self.ho, self.h, ky, self.stride, self.pad);
                let (oy_lo, oy_hi) = (vy_lo.max(oy0), vy_hi.min(oy1));
                for kx in 0..self.k {
                    let (ox_lo, ox_hi) = Self::valid_range(self.wo, self.w, kx, self.stride, self.pad);
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.pad;
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let src_row = &src[(oy - oy0) * self.wo..(oy - oy0 + 1) * self.wo];
                        if self.stride == 1 {
                            let ix0 = ox_lo + kx - self.pad;
                            for (d, s) in dst_row[ix0..ix0 + (ox_hi - ox_lo)].iter_mut().zip(&src_row[ox_lo..ox_hi]) {
                                *d += *s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst_row[ox * self.stride + kx - self.pad] += src_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix view: base slice plus row stride (column stride 1 unless transposed).
struct Mat<'a> {
    data: &'a [f32],
    row_stride: usize,
    transposed: bool,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f32], row_stride: usize) -> Self {
        Mat {
            data,
            row_stride,
            transposed: false,
        }
    }

    fn t(data: &'a [f32], row_stride: usize) -> Self {
        Mat {
            data,
            row_stride,
            transposed: true,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.row_stride as isize)
        } else {
            (self.row_stride as isize, 1)
        }
    }
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, `c` with row stride `ldc`.
fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32], ldc: usize) {
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    assert!(m == 0 || n == 0 || c.len() >= (m - 1) * ldc + n);
    // SAFETY: the strides above address only elements inside the borrowed
    // slices for the given m/k/n (checked by the callers' shapes and the assert).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(geom: &ConvGeom, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let g = geom;
    let (rows, cols) = (g.rows(), g.cols());
    let block = g.block_rows();
    let mut out = vec![0.0f32; g.n * g.cout * cols];
    let mut col = vec![0.0f32; rows * block * g.wo];
    let in_stride = g.cin * g.h * g.w;
    for b in 0..g.n {
        let image = &input.data()[b * in_stride..(b + 1) * in_stride];
        let dst = &mut out[b * g.cout * cols..(b + 1) * g.cout * cols];
        for (co, chunk) in dst.chunks_mut(cols).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        for oy0 in (0..g.ho).step_by(block) {
            let oy1 = (oy0 + block).min(g.ho);
            let bcols = (oy1 - oy0) * g.wo;
            g.im2col(image, oy0, oy1, &mut col);
            gemm(
                g.cout,
                rows,
                bcols,
                Mat::new(weight.data(), rows),
                Mat::new(&col, bcols),
                1.0,
                &mut dst[oy0 * g.wo..],
                cols,
            );
        }
    }
    Tensor {
        shape: vec![g.n, g.cout, g.ho, g.wo],
        data: out,
    }
}

/// Gradients for (input, weight, bias); the flags skip terms nobody needs.
pub(crate) fn conv2d_backward(
    geom: &ConvGeom,
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
    need_params: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let g = geom;
    let (rows, cols) = (g.rows(), g.cols());
    let block = g.block_rows();
    let in_stride = g.cin * g.h * g.w;
    let mut col = vec![0.0f32; rows * block * g.wo];
    let mut grad_in = need_input.then(|| vec![0.0f32; input.len()]);
    let mut grad_w = need_params.then(|| vec![0.0f32; weight.len()]);
    let mut grad_b = need_params.then(|| vec![0.0f64; g.cout]);
    for b in 0..g.n {
        let gout = &grad_out.data()[b * g.cout * cols..(b + 1) * g.cout * cols];
        let image = &input.data()[b * in_stride..(b + 1) * in_stride];
        if let Some(gb) = grad_b.as_mut() {
            for (co, chunk) in gout.chunks(cols).enumerate() {
                gb[co] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        for oy0 in (0..g.ho).step_by(block) {
            let oy1 = (oy0 + block).min(g.ho);
            let bcols = (oy1 - oy0) * g.wo;
            let gblock = &gout[oy0 * g.wo..];
            if let Some(gw) = grad_w.as_mut() {
                g.im2col(image, oy0, oy1, &mut col);
                // gw[cout, rows] += gout_block[cout, bcols] * col^T
                gemm(
                    g.cout,
                    bcols,
                    rows,
                    Mat::new(gblock, cols),
                    Mat::t(&col, bcols),
                    1.0,
                    gw,
                    rows,
                );
            }
            if let Some(gi) = grad_in.as_mut() {
                // col[rows, bcols] = W^T * gout_block
                gemm(
                    rows,
                    g.cout,
                    bcols,
                    Mat::t(weight.data(), rows),
                    Mat::new(gblock, cols),
                    0.0,
                    &mut col,
                    bcols,
                );
                g.col2im(&col, oy0, oy1, &mut gi[b * in_stride..(b + 1) * in_stride]);
            }
        }
    }
    (
        grad_in.map(|d| Tensor {
            shape: input.shape().to_vec(),
            data: d,
        }),
        grad_w.map(|d| Tensor {
            shape: weight.shape().to_vec(),
            data: d,
        }),
        grad_b.map(|d| Tensor {
            shape: vec![g.cout],
            data: d.into_iter().map(|v| v as f32).collect(),
        }),
    )
}
