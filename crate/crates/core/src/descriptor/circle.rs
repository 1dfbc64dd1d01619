//! Circle loss over cosine similarities, with its exact gradient.

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

/// Margin and scale of the circle loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleParams {
    pub margin: f64,
    pub gamma: f64,
}

impl Default for CircleParams {
    fn default() -> Self {
        CircleParams { margin: 0.1, gamma: 1.0 }
    }
}

// dot products of unit f32 vectors can overshoot 1 by a few ulps
const SIM_SLACK: f64 = 1e-3;

fn check(sp: &[f64], sn: &[f64], params: &CircleParams) -> Result<()> {
    if sp.is_empty() || sn.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "circle loss needs at least one positive and one negative ({} and {} given)",
            sp.len(),
            sn.len()
        )));
    }
    if !(params.gamma > 0.0) || !(params.margin >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "circle loss needs gamma > 0 and margin >= 0, got {params:?}"
        )));
    }
    if let Some(s) = sp.iter().chain(sn).find(|s| !(s.abs() <= 1.0 + SIM_SLACK)) {
        return Err(Error::InvalidArgument(format!("similarity {s} outside [-1, 1]")));
    }
    Ok(())
}

/// Log-sum-exp and its softmax weights.
fn lse(z: &[f64]) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logits `u_i = -gamma a_p (s_p - (1-m))`, `v_j = gamma a_n (s_n - m)` and their slopes.
fn logits(sp: &[f64], sn: &[f64], p: &CircleParams) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (m, g) = (p.margin, p.gamma);
    let mut u = Vec::with_capacity(sp.len());
    let mut du = Vec::with_capacity(sp.len());
    for &s in sp {
        let a = (1.0 + m - s).max(0.0);
        u.push(-g * a * (s - (1.0 - m)));
        du.push(if a > 0.0 { -g * (2.0 - 2.0 * s) } else { 0.0 });
    }
    let mut v = Vec::with_capacity(sn.len());
    let mut dv = Vec::with_capacity(sn.len());
    for &s in sn {
        let a = (s + m).max(0.0);
        v.push(g * a * (s - m));
        dv.push(if a > 0.0 { 2.0 * g * s } else { 0.0 });
    }
    (u, du, v, dv)
}

/// `log(1 + sum_j exp(v_j) * sum_i exp(u_i))`.
pub fn circle_loss(sp: &[f64], sn: &[f64], params: &CircleParams) -> Result<f64> {
    check(sp, sn, params)?;
    let (u, _, v, _) = logits(sp, sn, params);
    Ok(softplus(lse(&u).0 + lse(&v).0))
}

/// Loss plus gradients with respect to the positive and negative similarities.
pub fn circle_loss_grad(sp: &[f64], sn: &[f64], params: &CircleParams) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check(sp, sn, params)?;
    let (u, du, v, dv) = logits(sp, sn, params);
    let (lu, wu) = lse(&u);
    let (lv, wv) = lse(&v);
    let z = lu + lv;
    let outer = sigmoid(z);
    let gp = wu.iter().zip(&du).map(|(w, d)| outer * w * d).collect();
    let gn = wv.iter().zip(&dv).map(|(w, d)| outer * w * d).collect();
    Ok((softplus(z), gp, gn))
}

/// Row-wise circle loss of a square similarity matrix: the diagonal holds the
/// positives, the rest of each row the negatives. Returns the row mean.
pub fn similarity_matrix_loss(sim: &[f64], n: usize, params: &CircleParams) -> Result<(f64, Vec<f64>)> {
    if n < 2 || sim.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "similarity matrix must be n x n with n >= 2, got {} values for n = {n}",
            sim.len()
        )));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; n * n];
    let mut neg = Vec::with_capacity(n - 1);
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        neg.clear();
        neg.extend(row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| *s));
        let (l, gp, gn) = circle_loss_grad(&[row[i]], &neg, params)?;
        total += l;
        grad[i * n + i] = gp[0] / n as f64;
        let mut k = 0;
        for j in (0..n).filter(|&j| j != i) {
            grad[i * n + j] = gn[k] / n as f64;
            k += 1;
        }
    }
    Ok((total / n as f64, grad))
}

struct CircleOp {
    n: usize,
    params: CircleParams,
}

impl CustomOp for CircleOp {
    fn name(&self) -> &'static str {
        "circle_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let sim: Vec<f64> = inputs[0].data().iter().map(|&v| v as f64).collect();
        let (_, grad) = similarity_matrix_loss(&sim, self.n, &self.params).expect("validated at record time");
        let up = grad_out.data()[0] as f64;
        let data = grad.iter().map(|g| (g * up) as f32).collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), data).expect("sized"))]
    }
}

/// Records [`similarity_matrix_loss`] on an `[n, n]` similarity variable.
pub fn circle_loss_var(g: &mut Graph, sim: Var, params: &CircleParams) -> Result<Var> {
    let [n, n2] = g.value(sim).dims2("circle_loss")?;
    if n != n2 {
        return Err(Error::shape("circle_loss", format!("similarity matrix must be square, got {n}x{n2}")));
    }
    let values: Vec<f64> = g.value(sim).data().iter().map(|&v| v as f64).collect();
    let (loss, _) = similarity_matrix_loss(&values, n, params)?;
    g.custom(&[sim], Tensor::scalar(loss as f32), Box::new(CircleOp { n, params: *params }))
}
