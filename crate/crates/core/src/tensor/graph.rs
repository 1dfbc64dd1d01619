use super::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use super::resample::{point_taps, resize_plane, resize_plane_adjoint};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op whose vector-Jacobian product is supplied by the caller.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient with respect to each input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Leaky { x: Var, slope: f32 },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Resize(Var),
    MaxNormalize { x: Var, argmax: Option<usize> },
    ChannelNormalize(Var),
    SamplePoints { x: Var, points: Vec<(f32, f32)> },
    MatMulT(Var, Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Norm below which a descriptor is replaced by the first basis vector.
pub const NORM_GUARD: f64 = 1e-12;

/// Append-only tape of tensor ops.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the leaves of a [`Graph`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let geom = ConvGeom::new(x, w, b, stride, padding)?;
        let out = conv2d_forward(&geom, x, w, b);
        check_finite("conv2d", &out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Elementwise `max(x, slope * x)`; `slope = 0` is ReLU.
    pub fn leaky(&mut self, x: Var, slope: f32) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::InvalidArgument(format!("activation slope {slope} outside [0, 1)")));
        }
        let src = self.value(x);
        let data = src.data().iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Leaky { x, slope }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky(x, 0.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        check_finite("add", &out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        check_finite("mul", &out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let out = Tensor::scalar(total as f32);
        check_finite("sum", &out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    /// Bilinear (align-corners-false) resize of the two trailing extents.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!("resize target {out_w}x{out_h} has a zero extent")));
        }
        let src = self.value(x);
        let [n, c, h, w] = src.dims4("resize")?;
        let mut data = vec![0.0f32; n * c * out_h * out_w];
        for (plane, dst) in src.data().chunks(h * w).zip(data.chunks_mut(out_h * out_w)) {
            resize_plane(plane, h, w, out_h, out_w, dst);
        }
        let out = Tensor::new(vec![n, c, out_h, out_w], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Resize(x), rg))
    }

    /// `x / max(x)` over the whole tensor; all-zero (or non-positive max) maps to zeros.
    pub fn max_normalize(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let mut argmax = None;
        let mut best = 0.0f32;
        for (i, &v) in src.data().iter().enumerate() {
            if v > best {
                best = v;
                argmax = Some(i);
            }
        }
        let data = match argmax {
            Some(_) => src.data().iter().map(|&v| v / best).collect(),
            None => vec![0.0; src.len()],
        };
        let out = Tensor::new(src.shape().to_vec(), data)?;
        check_finite("max_normalize", &out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::MaxNormalize { x, argmax }, rg))
    }

    /// Unit L2 norm along dimension 1 (channels of `[N,C,H,W]` or columns of `[P,D]`).
    ///
    /// Vectors with norm below 1e-12 become the first basis vector.
    pub fn channel_normalize(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let (n, c, spatial) = match src.shape() {
            &[n, c, h, w] => (n, c, h * w),
            &[p, d] => (p, d, 1),
            other => return Err(Error::shape("channel_normalize", format!("unsupported shape {other:?}"))),
        };
        let mut data = vec![0.0f32; src.len()];
        for b in 0..n {
            for s in 0..spatial {
                let idx = |ch: usize| (b * c + ch) * spatial + s;
                let norm = (0..c).map(|ch| (src.data()[idx(ch)] as f64).powi(2)).sum::<f64>().sqrt();
                if norm < NORM_GUARD {
                    data[idx(0)] = 1.0;
                } else {
                    for ch in 0..c {
                        data[idx(ch)] = (src.data()[idx(ch)] as f64 / norm) as f32;
                    }
                }
            }
        }
        let out = Tensor::new(src.shape().to_vec(), data)?;
        check_finite("channel_normalize", &out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::ChannelNormalize(x), rg))
    }

    /// Bilinear samples of a `[1,C,H,W]` map at `(x, y)` pixel-centre coordinates -> `[P, C]`.
    pub fn sample_points(&mut self, x: Var, points: &[(f32, f32)]) -> Result<Var> {
        let src = self.value(x);
        let [n, c, h, w] = src.dims4("sample_points")?;
        if n != 1 {
            return Err(Error::shape("sample_points", format!("batch size must be 1, got {n}")));
        }
        for &(px, py) in points {
            if !(px >= 0.0 && py >= 0.0 && px <= (w - 1) as f32 && py <= (h - 1) as f32) {
                return Err(Error::OutOfBounds {
                    x: px,
                    y: py,
                    width: w,
                    height: h,
                });
            }
        }
        let mut data = vec![0.0f32; points.len() * c];
        for (p, &(px, py)) in points.iter().enumerate() {
            let taps = point_taps(px, py, w, h);
            for ch in 0..c {
                let plane = &src.data()[ch * h * w..(ch + 1) * h * w];
                data[p * c + ch] = taps.iter().map(|&(i, wt)| plane[i] * wt).sum();
            }
        }
        let out = Tensor::new(vec![points.len(), c], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            out,
            Op::SamplePoints {
                x,
                points: points.to_vec(),
            },
            rg,
        ))
    }

    /// `a [P,D]` times `b [Q,D]` transposed -> `[P,Q]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let [p, d] = self.value(a).dims2("matmul_t")?;
        let [q, d2] = self.value(b).dims2("matmul_t")?;
        if d != d2 {
            return Err(Error::shape("matmul_t", format!("inner dims {d} vs {d2}")));
        }
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![0.0f32; p * q];
        for i in 0..p {
            for j in 0..q {
                let dot: f64 = (0..d).map(|k| ta[i * d + k] as f64 * tb[j * d + k] as f64).sum();
                data[i * q + j] = dot as f32;
            }
        }
        let out = Tensor::new(vec![p, q], data)?;
        check_finite("matmul_t", &out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    /// Records a caller-defined op whose forward value is already computed.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::default();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates d(loss)/d(leaf) into `store` for every leaf that requires grad.
    pub fn backward_into(&self, loss: Var, store: &mut Gradients) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            ));
        }
        if store.grads.len() < self.nodes.len() {
            store.grads.resize(self.nodes.len(), None);
        }
        let mut work: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        work[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = work[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                match &mut store.grads[idx] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
                continue;
            }
            for (var, g) in self.vjp(node, &grad) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut work[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, node: &Node, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need_input = self.requires_grad(*input);
                let need_params = self.requires_grad(*weight) || self.requires_grad(*bias);
                let (gi, gw, gb) = conv2d_backward(
                    geom,
                    self.value(*input),
                    self.value(*weight),
                    grad,
                    need_input,
                    need_params,
                );
                out.extend(gi.map(|g| (*input, g)));
                out.extend(gw.map(|g| (*weight, g)));
                out.extend(gb.map(|g| (*bias, g)));
            }
            Op::Leaky { x, slope } => {
                let src = self.value(*x);
                let data = src
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| if v >= 0.0 { g } else { slope * g })
                    .collect();
                out.push((*x, Tensor::new(src.shape().to_vec(), data).expect("shape")));
            }
            Op::Add(a, b) => {
                out.push((*a, grad.clone()));
                out.push((*b, grad.clone()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = tb.data().iter().zip(grad.data()).map(|(y, g)| y * g).collect();
                let gb = ta.data().iter().zip(grad.data()).map(|(x, g)| x * g).collect();
                out.push((*a, Tensor::new(ta.shape().to_vec(), ga).expect("shape")));
                out.push((*b, Tensor::new(tb.shape().to_vec(), gb).expect("shape")));
            }
            Op::Sum(x) => {
                let g = grad.data()[0];
                out.push((*x, Tensor::full(self.value(*x).shape().to_vec(), g)));
            }
            Op::Resize(x) => {
                let src = self.value(*x);
                let [n, c, h, w] = src.dims4("resize").expect("4-d");
                let [_, _, oh, ow] = node.value.dims4("resize").expect("4-d");
                let mut data = vec![0.0f32; n * c * h * w];
                for (gp, sp) in grad.data().chunks(oh * ow).zip(data.chunks_mut(h * w)) {
                    resize_plane_adjoint(gp, h, w, oh, ow, sp);
                }
                out.push((*x, Tensor::new(src.shape().to_vec(), data).expect("shape")));
            }
            Op::MaxNormalize { x, argmax } => {
                let src = self.value(*x);
                let mut data = vec![0.0f32; src.len()];
                if let Some(am) = *argmax {
                    let m = src.data()[am] as f64;
                    let mut dot = 0.0f64;
                    for (i, (&g, &y)) in grad.data().iter().zip(node.value.data()).enumerate() {
                        data[i] = (g as f64 / m) as f32;
                        dot += g as f64 * y as f64;
                    }
                    data[am] += (-dot / m) as f32;
                }
                out.push((*x, Tensor::new(src.shape().to_vec(), data).expect("shape")));
            }
            Op::ChannelNormalize(x) => {
                let src = self.value(*x);
                let (n, c, spatial) = match src.shape() {
                    &[n, c, h, w] => (n, c, h * w),
                    &[p, d] => (p, d, 1),
                    _ => unreachable!("validated in forward"),
                };
                let mut data = vec![0.0f32; src.len()];
                for b in 0..n {
                    for s in 0..spatial {
                        let idx = |ch: usize| (b * c + ch) * spatial + s;
                        let norm = (0..c).map(|ch| (src.data()[idx(ch)] as f64).powi(2)).sum::<f64>().sqrt();
                        if norm < NORM_GUARD {
                            continue;
                        }
                        let dot: f64 = (0..c)
                            .map(|ch| node.value.data()[idx(ch)] as f64 * grad.data()[idx(ch)] as f64)
                            .sum();
                        for ch in 0..c {
                            let y = node.value.data()[idx(ch)] as f64;
                            data[idx(ch)] = ((grad.data()[idx(ch)] as f64 - y * dot) / norm) as f32;
                        }
                    }
                }
                out.push((*x, Tensor::new(src.shape().to_vec(), data).expect("shape")));
            }
            Op::SamplePoints { x, points } => {
                let src = self.value(*x);
                let [_, c, h, w] = src.dims4("sample_points").expect("4-d");
                let mut data = vec![0.0f32; src.len()];
                for (p, &(px, py)) in points.iter().enumerate() {
                    let taps = point_taps(px, py, w, h);
                    for ch in 0..c {
                        let g = grad.data()[p * c + ch];
                        let plane = &mut data[ch * h * w..(ch + 1) * h * w];
                        for &(i, wt) in &taps {
                            plane[i] += g * wt;
                        }
                    }
                }
                out.push((*x, Tensor::new(src.shape().to_vec(), data).expect("shape")));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let [p, d] = ta.dims2("matmul_t").expect("2-d");
                let [q, _] = tb.dims2("matmul_t").expect("2-d");
                let g = grad.data();
                let mut ga = vec![0.0f32; p * d];
                let mut gb = vec![0.0f32; q * d];
                for i in 0..p {
                    for k in 0..d {
                        ga[i * d + k] = (0..q).map(|j| g[i * q + j] as f64 * tb.data()[j * d + k] as f64).sum::<f64>() as f32;
                    }
                }
                for j in 0..q {
                    for k in 0..d {
                        gb[j * d + k] = (0..p).map(|i| g[i * q + j] as f64 * ta.data()[i * d + k] as f64).sum::<f64>() as f32;
                    }
                }
                out.push((*a, Tensor::new(vec![p, d], ga).expect("shape")));
                out.push((*b, Tensor::new(vec![q, d], gb).expect("shape")));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                for (var, g) in inputs.iter().zip(op.backward(&values, &node.value, grad)) {
                    if let Some(g) = g {
                        out.push((*var, g));
                    }
                }
            }
        }
        out
    }
}
