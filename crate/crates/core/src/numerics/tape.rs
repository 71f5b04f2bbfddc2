//! Reverse-mode differentiation over an eagerly evaluated tape.
//!
//! Every op computes its value immediately and records its inputs; the
//! backward sweep walks the tape in reverse and applies one vector-Jacobian
//! rule per op. Nodes that do not depend on any parameter are skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::linalg;
use super::tensor::{conv2d_backward, conv2d_with, gemm, matmul, ConvGeom, Padding, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A fixed linear map whose transpose is also available, e.g. a resampling
/// operator. Used for ops whose Jacobian does not depend on the input.
pub trait LinearOp: Send + Sync {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn apply_transpose(&self, y: &Tensor) -> Result<Tensor>;
}

/// Vector-Jacobian product for a user-supplied op: `(upstream, inputs) -> input grads`.
pub type CustomBackward = Arc<dyn Fn(&Tensor, &[&Tensor]) -> Vec<Tensor> + Send + Sync>;

#[derive(Clone)]
enum Op {
    Leaf,
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    LogAbs(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Conv2d(Var, Var, Padding),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SliceLast(Var, usize, usize),
    ConcatLast(Vec<Var>),
    Squeeze2(Var),
    Unsqueeze2(Var),
    Linear(Var, Arc<dyn LinearOp>),
    LogAbsDet(Var),
    Custom(Vec<Var>, CustomBackward),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddBcast(..) => "add_bcast",
            Op::MulBcast(..) => "mul_bcast",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::LogAbs(_) => "log_abs",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Square(_) => "square",
            Op::Clamp(..) => "clamp",
            Op::Matmul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Conv2d(..) => "conv2d",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::SliceLast(..) => "slice",
            Op::ConcatLast(_) => "concat",
            Op::Squeeze2(_) => "squeeze",
            Op::Unsqueeze2(_) => "unsqueeze",
            Op::Linear(..) => "linear",
            Op::LogAbsDet(_) => "log_abs_det",
            Op::Custom(..) => "custom",
        };
        f.write_str(name)
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn suffix_broadcast(op: &'static str, x: &[usize], b: &[usize]) -> Result<usize> {
    if b.len() > x.len() || x[x.len() - b.len()..] != *b {
        return Err(Error::shape(
            op,
            format!("{b:?} is not a trailing sub-shape of {x:?}"),
        ));
    }
    Ok(b.iter().product())
}

fn hwc(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::shape(op, format!("expected [H,W,C], got {shape:?}"))),
    }
}

/// `[H, W, C] -> [H/2, W/2, 4C]`; block offset `(dy, dx)` lands in channels
/// `(2 dy + dx) C ..`.
pub fn squeeze2(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = hwc("squeeze", x.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Indivisible {
            height: h,
            width: w,
            factor: 2,
        });
    }
    let (oh, ow, oc) = (h / 2, w / 2, 4 * c);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..oh {
        for j in 0..ow {
            for dy in 0..2 {
                for dx in 0..2 {
                    let s = ((2 * i + dy) * w + 2 * j + dx) * c;
                    let d = (i * ow + j) * oc + (dy * 2 + dx) * c;
                    out[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, oc], out)
}

/// Inverse of [`squeeze2`].
pub fn unsqueeze2(x: &Tensor) -> Result<Tensor> {
    let (oh, ow, oc) = hwc("unsqueeze", x.shape())?;
    if oc % 4 != 0 {
        return Err(Error::shape(
            "unsqueeze",
            format!("channel count {oc} not divisible by 4"),
        ));
    }
    let (h, w, c) = (oh * 2, ow * 2, oc / 4);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..oh {
        for j in 0..ow {
            for dy in 0..2 {
                for dx in 0..2 {
                    let d = ((2 * i + dy) * w + 2 * j + dx) * c;
                    let s = (i * ow + j) * oc + (dy * 2 + dx) * c;
                    out[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], out)
}

fn slice_last(x: &Tensor, start: usize, end: usize) -> Tensor {
    let c = x.last_dim();
    let width = end - start;
    let rows = x.len() / c;
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&x.data()[r * c + start..r * c + end]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = width;
    Tensor::new(shape, out).expect("slice shape")
}

impl Tape {
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// A differentiable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> Var {
        self.push(t, Op::Param(name.into()), &[])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(v, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `x + b` where `b`'s shape is a trailing sub-shape of `x`'s.
    pub fn add_bcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = suffix_broadcast("add_bcast", self.value(x).shape(), self.value(b).shape())?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, bb) in chunk.iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBcast(x, b), &[x, b]))
    }

    /// `x * b` where `b`'s shape is a trailing sub-shape of `x`'s.
    pub fn mul_bcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = suffix_broadcast("mul_bcast", self.value(x).shape(), self.value(b).shape())?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, bb) in chunk.iter_mut().zip(&bv) {
                *o *= bb;
            }
        }
        Ok(self.push(out, Op::MulBcast(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a + c);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Log(x), &[x])
    }

    pub fn log_abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.abs().ln());
        self.push(v, Op::LogAbs(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| 1.0 / (1.0 + (-a).exp()));
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi), &[x])
    }

    /// `[m,k] x [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (&[m, k], &[k2, n]) = (sa, sb) else {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::Matmul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let &[r, c] = self.value(a).shape() else {
            return Err(Error::shape(
                "transpose",
                format!("{:?}", self.value(a).shape()),
            ));
        };
        let t = Tensor::new(vec![c, r], linalg::transpose(self.value(a).data(), r, c))?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let g = ConvGeom::new(self.value(x).shape(), self.value(kernel).shape(), padding)?;
        let out = conv2d_with(&g, self.value(x).data(), self.value(kernel).data());
        Ok(self.push(out, Op::Conv2d(x, kernel, padding), &[x, kernel]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Channels `start..end` of the last dimension.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let c = self.value(x).last_dim();
        if start >= end || end > c {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} out of {c} channels"),
            ));
        }
        let v = slice_last(self.value(x), start, end);
        Ok(self.push(v, Op::SliceLast(x, start, end), &[x]))
    }

    /// Concatenation along the last dimension.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.is_empty() || s[..s.len() - 1] != *lead {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} incompatible with leading {lead:?}"),
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::ConcatLast(parts.to_vec()), parts))
    }

    /// Space-to-depth: `[H,W,C] -> [H/2,W/2,4C]`.
    pub fn squeeze2(&mut self, x: Var) -> Result<Var> {
        let v = squeeze2(self.value(x))?;
        Ok(self.push(v, Op::Squeeze2(x), &[x]))
    }

    /// Depth-to-space: `[H,W,4C] -> [2H,2W,C]`.
    pub fn unsqueeze2(&mut self, x: Var) -> Result<Var> {
        let v = unsqueeze2(self.value(x))?;
        Ok(self.push(v, Op::Unsqueeze2(x), &[x]))
    }

    pub fn linear(&mut self, x: Var, op: Arc<dyn LinearOp>) -> Result<Var> {
        let v = op.apply(self.value(x))?;
        Ok(self.push(v, Op::Linear(x, op), &[x]))
    }

    /// `log|det W|` of a square matrix.
    pub fn log_abs_det(&mut self, w: Var) -> Result<Var> {
        let &[n, m] = self.value(w).shape() else {
            return Err(Error::shape("log_abs_det", "expected a matrix"));
        };
        if n != m {
            return Err(Error::shape("log_abs_det", format!("{n}x{m} not square")));
        }
        let (l, _) = linalg::log_abs_det(self.value(w).data(), n)?;
        Ok(self.push(Tensor::scalar(l), Op::LogAbsDet(w), &[w]))
    }

    /// Records an op with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), backward), inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g.zip_map(val(*b), |g, y| g * y)?);
                self.accumulate(grads, *b, g.zip_map(val(*a), |g, x| g * x)?);
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                self.accumulate(grads, *a, g.zip_map(bv, |g, y| g / y)?);
                // d(a/b)/db = -out / b
                let t = out.zip_map(bv, |o, y| -o / y)?;
                self.accumulate(grads, *b, g.zip_map(&t, |g, t| g * t)?);
            }
            Op::AddBcast(x, b) => {
                self.accumulate(grads, *x, g.clone());
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (acc, v) in gb.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *b, Tensor::new(val(*b).shape().to_vec(), gb)?);
            }
            Op::MulBcast(x, b) => {
                let bv = val(*b);
                let n = bv.len();
                let mut gx = g.clone();
                for chunk in gx.data_mut().chunks_mut(n) {
                    for (o, s) in chunk.iter_mut().zip(bv.data()) {
                        *o *= s;
                    }
                }
                self.accumulate(grads, *x, gx);
                let mut gb = vec![0.0; n];
                for (gc, xc) in g.data().chunks(n).zip(val(*x).data().chunks(n)) {
                    for ((acc, gv), xv) in gb.iter_mut().zip(gc).zip(xc) {
                        *acc += gv * xv;
                    }
                }
                self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * c)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Exp(x) => self.accumulate(grads, *x, g.zip_map(out, |g, o| g * o)?),
            Op::Log(x) | Op::LogAbs(x) => {
                self.accumulate(grads, *x, g.zip_map(val(*x), |g, a| g / a)?)
            }
            Op::Tanh(x) => self.accumulate(grads, *x, g.zip_map(out, |g, o| g * (1.0 - o * o))?),
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, g.zip_map(out, |g, o| g * o * (1.0 - o))?)
            }
            Op::Square(x) => self.accumulate(grads, *x, g.zip_map(val(*x), |g, a| 2.0 * g * a)?),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let gx = g.zip_map(val(*x), |g, a| if a > lo && a < hi { g } else { 0.0 })?;
                self.accumulate(grads, *x, gx)
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(g.data(), false, bv.data(), true, &mut ga, m, n, k, 0.0);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(av.data(), true, g.data(), false, &mut gb, k, m, n, 0.0);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let t = Tensor::new(vec![c, r], linalg::transpose(g.data(), r, c))?;
                self.accumulate(grads, *a, t);
            }
            Op::Conv2d(x, k, padding) => {
                let (xv, kv) = (val(*x), val(*k));
                let geom = ConvGeom::new(xv.shape(), kv.shape(), *padding)?;
                let (gx, gk) = conv2d_backward(&geom, xv.data(), kv.data(), g.data());
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                self.accumulate(grads, *k, Tensor::new(kv.shape().to_vec(), gk)?);
            }
            Op::Sum(x) => self.accumulate(grads, *x, Tensor::full(val(*x).shape(), g.item())),
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                self.accumulate(grads, *x, Tensor::full(val(*x).shape(), g.item() / n))
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.clone().reshape(val(*x).shape())?)
            }
            Op::SliceLast(x, start, end) => {
                let xv = val(*x);
                let c = xv.last_dim();
                let w = end - start;
                let mut gx = Tensor::zeros(xv.shape());
                for (r, gr) in g.data().chunks(w).enumerate() {
                    gx.data_mut()[r * c + start..r * c + end].copy_from_slice(gr);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatLast(parts) => {
                let total = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    if self.nodes[p.0].needs_grad {
                        let gp = slice_last(g, offset, offset + w);
                        self.accumulate(grads, p, gp);
                    }
                    offset += w;
                }
                debug_assert_eq!(offset, total);
            }
            Op::Squeeze2(x) => self.accumulate(grads, *x, unsqueeze2(g)?),
            Op::Unsqueeze2(x) => self.accumulate(grads, *x, squeeze2(g)?),
            Op::Linear(x, op) => self.accumulate(grads, *x, op.apply_transpose(g)?),
            Op::LogAbsDet(w) => {
                let wv = val(*w);
                let n = wv.shape()[0];
                let inv = linalg::inverse(wv.data(), n)?;
                let s = g.item();
                let inv_t: Vec<f64> = linalg::transpose(&inv, n, n).iter().map(|v| v * s).collect();
                self.accumulate(grads, *w, Tensor::new(vec![n, n], inv_t)?);
            }
            Op::Custom(inputs, backward) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let gs = backward(g, &ins);
                if gs.len() != inputs.len() {
                    return Err(Error::shape(
                        "custom",
                        format!("backward returned {} grads for {} inputs", gs.len(), inputs.len()),
                    ));
                }
                for (&v, gv) in inputs.iter().zip(gs) {
                    if gv.shape() != val(v).shape() {
                        return Err(Error::shape("custom", "gradient shape mismatch"));
                    }
                    self.accumulate(grads, v, gv);
                }
            }
        }
        Ok(())
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every named parameter on `tape`, zero-filled for
    /// parameters that did not reach the loss. Parameters registered more
    /// than once under the same name have their gradients summed.
    pub fn params(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = self
                    .grads
                    .get(i)
                    .and_then(Option::as_ref)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let p = t.param("p", Tensor::from_fn(&[2, 3], |i| i as f64));
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(p).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn sum_of_squares() {
        let mut t = Tape::new();
        let p = t.param("p", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = t.square(p);
        let l = t.sum(sq);
        let g = t.backward(l).unwrap().params(&t);
        assert_eq!(g["p"].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let p = t.param("p", Tensor::zeros(&[2]));
        assert!(matches!(t.backward(p), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn squeeze_roundtrip() {
        let x = Tensor::from_fn(&[4, 6, 3], |i| i as f64);
        let s = squeeze2(&x).unwrap();
        assert_eq!(s.shape(), &[2, 3, 12]);
        assert_eq!(unsqueeze2(&s).unwrap(), x);
        // the top-left 2x2 block of channel 0 lands in the first pixel
        assert_eq!(s.data()[0], x.data()[0]);
        assert_eq!(s.data()[3], x.data()[3]);
        assert_eq!(s.data()[6], x.data()[6 * 3]);
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut t = Tape::new();
        let a = t.param("a", Tensor::ones(&[2]));
        let _b = t.param("b", Tensor::ones(&[3]));
        let l = t.sum(a);
        let g = t.backward(l).unwrap().params(&t);
        assert_eq!(g["b"], Tensor::zeros(&[3]));
    }
}
