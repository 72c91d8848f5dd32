//! Tape-based reverse-mode differentiation over the tensor kernels.
//!
//! Every op appends a node holding its output and whatever it needs for the
//! adjoint. [`Tape::backward`] walks the nodes once, newest first.

mod gradcheck;
mod optim;
mod ste;

pub use gradcheck::{gradcheck, relative_error};
pub use optim::{Adam, Optimizer, Sgd};
pub use ste::{ste_grads, ste_quantizer_grads, SteGrads};

use crate::error::{invalid, mismatch, Result};
use crate::tensor::{self, LayerNormCache, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        Self {
            trainable: false,
            ..Self::new(value)
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    ScaleBy { x: Var, s: Var },
    Exp(Var),
    Gelu(Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    MaxPool { x: Var, idx: Vec<u32> },
    LayerNorm { x: Var, g: Var, b: Var, cache: LayerNormCache },
    SoftmaxLast(Var),
    Bmm { a: Var, b: Var, ta: bool, tb: bool },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Roll { x: Var, shifts: Vec<(usize, isize)> },
    PadReflect(Var),
    AddBcast { x: Var, b: Var },
    IndexRows { table: Var, idx: Vec<usize> },
    L2NormLast { x: Var, eps: f32 },
    PixelShuffle { x: Var, r: usize },
    FakeQuant {
        x: Var,
        l: Var,
        u: Var,
        bits: u32,
        axis: Option<usize>,
    },
    L1Loss { a: Var, target: Tensor, scale: f32 },
    WeightedSum { x: Var, w: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; independent tapes may run concurrently.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Adds an input. `requires_grad` marks it as something to differentiate.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any flowed there.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Tape::grad`] but a zero tensor when nothing reached `v`.
    pub fn grad_or_zero(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let y = self.value(x).scale(c);
        let rg = self.rg(&[x]);
        self.push(y, Op::Scale(x, c), rg)
    }

    /// `x · s` for a one-element `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(invalid("scale_by", "factor must have one element"));
        }
        let c = self.value(s).item();
        let y = self.value(x).scale(c);
        let rg = self.rg(&[x, s]);
        Ok(self.push(y, Op::ScaleBy { x, s }, rg))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f32::exp);
        let rg = self.rg(&[x]);
        self.push(y, Op::Exp(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = tensor::gelu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(y, Op::Gelu(x), rg)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let y = tensor::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
            groups,
        )?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(
            y,
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            },
            rg,
        ))
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, s: usize, p: usize) -> Result<Var> {
        let (y, idx) = tensor::max_pool2d_with_indices(self.value(x), k, s, p)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::MaxPool { x, idx }, rg))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var, eps: f32) -> Result<Var> {
        let (y, cache) = tensor::layer_norm(self.value(x), self.value(g), self.value(b), eps)?;
        let rg = self.rg(&[x, g, b]);
        Ok(self.push(y, Op::LayerNorm { x, g, b, cache }, rg))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let axis = self.value(x).rank() - 1;
        let y = tensor::softmax(self.value(x), axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::SoftmaxLast(x), rg))
    }

    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let y = tensor::bmm(self.value(a), self.value(b), ta, tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Bmm { a, b, ta, tb }, rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let y = tensor::permute(self.value(x), axes)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            y,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let y = tensor::narrow(self.value(x), axis, start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Narrow { x, axis, start }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = tensor::concat(&vals, axis)?;
        let rg = self.rg(parts);
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn roll(&mut self, x: Var, shifts: &[(usize, isize)]) -> Result<Var> {
        let y = tensor::roll(self.value(x), shifts)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            y,
            Op::Roll {
                x,
                shifts: shifts.to_vec(),
            },
            rg,
        ))
    }

    pub fn pad_reflect(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var> {
        let y = tensor::pad_reflect(self.value(x), bottom, right)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::PadReflect(x), rg))
    }

    pub fn add_bcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let y = tensor::add_bcast(self.value(x), self.value(b))?;
        let rg = self.rg(&[x, b]);
        Ok(self.push(y, Op::AddBcast { x, b }, rg))
    }

    pub fn index_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let y = tensor::index_rows(self.value(table), idx)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            y,
            Op::IndexRows {
                table,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn l2_normalize_last(&mut self, x: Var, eps: f32) -> Var {
        let y = tensor::l2_normalize_last(self.value(x), eps);
        let rg = self.rg(&[x]);
        self.push(y, Op::L2NormLast { x, eps }, rg)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = tensor::pixel_shuffle(self.value(x), r)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::PixelShuffle { x, r }, rg))
    }

    /// Fake quantization with learnable bounds. `l`/`u` hold one value, or one
    /// per slice of `axis` for per-channel quantization.
    pub fn fake_quant(&mut self, x: Var, l: Var, u: Var, bits: u32, axis: Option<usize>) -> Result<Var> {
        let y = ste::fake_quant_forward(self.value(x), self.value(l), self.value(u), bits, axis)?;
        let rg = self.rg(&[x, l, u]);
        Ok(self.push(y, Op::FakeQuant { x, l, u, bits, axis }, rg))
    }

    /// `scale · Σ|a − target|` as a one-element tensor.
    pub fn l1_loss(&mut self, a: Var, target: &Tensor, scale: f32) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != target.shape() {
            return Err(mismatch("l1_loss", av.shape(), target.shape()));
        }
        let s: f64 = av
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, t)| (x - t).abs() as f64)
            .sum();
        let y = Tensor::scalar((s * scale as f64) as f32);
        let rg = self.rg(&[a]);
        Ok(self.push(
            y,
            Op::L1Loss {
                a,
                target: target.clone(),
                scale,
            },
            rg,
        ))
    }

    /// `Σ w ⊙ x` as a one-element tensor.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != w.shape() {
            return Err(mismatch("weighted_sum", xv.shape(), w.shape()));
        }
        let s: f64 = xv
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::WeightedSum { x, w: w.clone() },
            rg,
        ))
    }

    fn accumulate(&mut self, v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    /// Back-propagates from a one-element `loss`. Gradients are then read with
    /// [`Tape::grad`]; leaves the loss does not depend on get no gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, i: usize, g: &Tensor) -> Result<()> {
        // Temporarily detach the op so the tape can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let res = self.backward_op(i, &op, g);
        self.nodes[i].op = op;
        res
    }

    fn backward_op(&mut self, i: usize, op: &Op, g: &Tensor) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone())?;
                self.accumulate(*b, g.clone())?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let ga = g.mul(self.value(*b))?;
                    self.accumulate(*a, ga)?;
                }
                if self.needs(*b) {
                    let gb = g.mul(self.value(*a))?;
                    self.accumulate(*b, gb)?;
                }
            }
            Op::Scale(x, c) => self.accumulate(*x, g.scale(*c))?,
            Op::ScaleBy { x, s } => {
                if self.needs(*x) {
                    let gx = g.scale(self.value(*s).item());
                    self.accumulate(*x, gx)?;
                }
                if self.needs(*s) {
                    let d: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| (*a as f64) * (*b as f64))
                        .sum();
                    let gs = Tensor::new(self.value(*s).shape(), vec![d as f32])?;
                    self.accumulate(*s, gs)?;
                }
            }
            Op::Exp(x) => {
                let gx = g.mul(&self.nodes[i].value)?;
                self.accumulate(*x, gx)?;
            }
            Op::Gelu(x) => {
                let gx = g.mul(&tensor::gelu_grad(self.value(*x)))?;
                self.accumulate(*x, gx)?;
            }
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            } => {
                let (gx, gw, gb) = tensor::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    *groups,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(gx) = gx {
                    self.accumulate(*x, gx)?;
                }
                if let Some(gw) = gw {
                    self.accumulate(*w, gw)?;
                }
                if let Some(b) = b {
                    self.accumulate(*b, gb)?;
                }
            }
            Op::MaxPool { x, idx } => {
                let xs = self.value(*x).shape().to_vec();
                let (hw_in, hw_out) = (xs[2] * xs[3], g.shape()[2] * g.shape()[3]);
                let mut gx = vec![0.0f32; self.value(*x).numel()];
                for (o, (&gv, &ix)) in g.data().iter().zip(idx).enumerate() {
                    let plane = o / hw_out;
                    gx[plane * hw_in + ix as usize] += gv;
                }
                self.accumulate(*x, Tensor::new(&xs, gx)?)?;
            }
            Op::LayerNorm { x, g: gamma, b, cache } => {
                let (gx, gg, gb) =
                    tensor::layer_norm_backward(self.value(*x), self.value(*gamma), cache, g)?;
                self.accumulate(*x, gx)?;
                self.accumulate(*gamma, gg)?;
                self.accumulate(*b, gb)?;
            }
            Op::SoftmaxLast(x) => {
                let gx = tensor::softmax_last_backward(&self.nodes[i].value, g)?;
                self.accumulate(*x, gx)?;
            }
            Op::Bmm { a, b, ta, tb } => {
                if self.needs(*a) {
                    let ga = if *ta {
                        tensor::bmm(self.value(*b), g, *tb, true)?
                    } else {
                        tensor::bmm(g, self.value(*b), false, !*tb)?
                    };
                    self.accumulate(*a, ga)?;
                }
                if self.needs(*b) {
                    let gb = if *tb {
                        tensor::bmm(g, self.value(*a), true, *ta)?
                    } else {
                        tensor::bmm(self.value(*a), g, !*ta, false)?
                    };
                    self.accumulate(*b, gb)?;
                }
            }
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (k, &a) in axes.iter().enumerate() {
                    inv[a] = k;
                }
                self.accumulate(*x, tensor::permute(g, &inv)?)?;
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(*x, g.reshape(&shape)?)?;
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.value(*x).shape().to_vec();
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let len = g.shape()[*axis];
                let mut gx = vec![0.0f32; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * xs[*axis] + start) * inner;
                    gx[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(*x, Tensor::new(&xs, gx)?)?;
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for p in parts {
                    let len = self.value(*p).shape()[*axis];
                    if self.needs(*p) {
                        let gp = tensor::narrow(g, *axis, start, len)?;
                        self.accumulate(*p, gp)?;
                    }
                    start += len;
                }
            }
            Op::Roll { x, shifts } => {
                let back: Vec<(usize, isize)> = shifts.iter().map(|&(a, s)| (a, -s)).collect();
                self.accumulate(*x, tensor::roll(g, &back)?)?;
            }
            Op::PadReflect(x) => {
                let xs = self.value(*x).shape().to_vec();
                self.accumulate(*x, tensor::unpad_reflect_grad(g, xs[2], xs[3])?)?;
            }
            Op::AddBcast { x, b } => {
                self.accumulate(*x, g.clone())?;
                if self.needs(*b) {
                    let bs = self.value(*b).shape().to_vec();
                    self.accumulate(*b, tensor::sum_leading(g, &bs)?)?;
                }
            }
            Op::IndexRows { table, idx } => {
                let rows = self.value(*table).shape()[0];
                self.accumulate(*table, tensor::scatter_rows(g, idx, rows)?)?;
            }
            Op::L2NormLast { x, eps } => {
                let gx = tensor::l2_normalize_last_backward(self.value(*x), g, *eps);
                self.accumulate(*x, gx)?;
            }
            Op::PixelShuffle { x, r } => {
                self.accumulate(*x, tensor::pixel_unshuffle(g, *r)?)?;
            }
            Op::FakeQuant { x, l, u, bits, axis } => {
                let (gx, gl, gu) =
                    ste::fake_quant_backward(self.value(*x), self.value(*l), self.value(*u), *bits, *axis, g)?;
                if self.needs(*x) {
                    self.accumulate(*x, gx)?;
                }
                self.accumulate(*l, gl)?;
                self.accumulate(*u, gu)?;
            }
            Op::L1Loss { a, target, scale } => {
                let s = g.item() * scale;
                let ga = self.value(*a).zip_map(target, "l1_loss", move |x, t| {
                    let d = x - t;
                    if d > 0.0 {
                        s
                    } else if d < 0.0 {
                        -s
                    } else {
                        0.0
                    }
                })?;
                self.accumulate(*a, ga)?;
            }
            Op::WeightedSum { x, w } => {
                self.accumulate(*x, w.scale(g.item()))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_input() {
        let mut t = Tape::new();
        let x = Tensor::from_fn(&[2, 3], |i| i as f32 - 1.5);
        let w = t.leaf(Tensor::full(&[2, 3], 0.5), true);
        let xv = t.leaf(x.clone(), false);
        let p = t.mul(w, xv).unwrap();
        let loss = t.weighted_sum(p, &Tensor::full(&[2, 3], 1.0)).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &x);
        assert!(t.grad(xv).is_none());
    }

    #[test]
    fn unrelated_parameter_gets_no_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::full(&[3], 2.0), true);
        let z = t.leaf(Tensor::full(&[3], 1.0), true);
        let y = t.scale(z, 3.0);
        let loss = t.weighted_sum(y, &Tensor::full(&[3], 1.0)).unwrap();
        t.backward(loss).unwrap();
        assert!(t.grad(w).is_none());
        assert_eq!(t.grad_or_zero(w), Tensor::zeros(&[3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::full(&[3], 2.0), true);
        assert!(t.backward(w).is_err());
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::full(&[1], 3.0), true);
        let y = t.mul(w, w).unwrap();
        let loss = t.weighted_sum(y, &Tensor::full(&[1], 1.0)).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap().item(), 6.0);
    }
}
