//! Backend recording onto an autograd [`Tape`].

use std::collections::HashMap;

use super::backend::{Backend, Init};
use super::store::ParamStore;
use crate::autograd::{Tape, Var};
use crate::error::{mismatch, Error, Result};
use crate::quant::{channel_site, QuantTable, PASS_THROUGH_BITS};
use crate::tensor::Tensor;

/// Learnable bounds of one quantization site as tape leaves.
#[derive(Debug, Clone)]
pub struct BoundVars {
    pub l: Var,
    pub u: Var,
    pub bits: u32,
    pub per_channel: bool,
}

/// Records the network on a tape. Weights are leaves that require gradients
/// when `train_weights` is set; quantization bounds when `train_bounds` is set.
pub struct TapeBackend<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    train_weights: bool,
    params: HashMap<String, Var>,
    quant: Option<&'a QuantTable>,
    train_bounds: bool,
    bounds: Vec<(String, BoundVars)>,
}

impl<'a> TapeBackend<'a> {
    pub fn new(store: &'a ParamStore, train_weights: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            train_weights,
            params: HashMap::new(),
            quant: None,
            train_bounds: false,
            bounds: Vec::new(),
        }
    }

    pub fn with_quant(mut self, table: &'a QuantTable, train_bounds: bool) -> Self {
        self.quant = Some(table);
        self.train_bounds = train_bounds;
        self
    }

    pub fn input(&mut self, x: Tensor) -> Var {
        self.tape.leaf(x, false)
    }

    /// Gradient of every parameter touched by the forward pass, by name.
    pub fn param_grads(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, &v)| (n.clone(), self.tape.grad_or_zero(v)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Gradients of quantization bounds as `(site, dl, du)`, expanding
    /// per-channel weights into their `#k` sub-sites.
    pub fn bound_grads(&self) -> Vec<(String, f32, f32)> {
        let mut out = Vec::new();
        for (name, b) in &self.bounds {
            let gl = self.tape.grad_or_zero(b.l);
            let gu = self.tape.grad_or_zero(b.u);
            if b.per_channel {
                for k in 0..gl.numel() {
                    out.push((channel_site(name, k), gl.data()[k], gu.data()[k]));
                }
            } else {
                out.push((name.clone(), gl.data()[0], gu.data()[0]));
            }
        }
        out
    }

    fn bound_leaves(&mut self, name: &str, l: Vec<f32>, u: Vec<f32>, bits: u32, per_channel: bool) -> Result<BoundVars> {
        let n = l.len();
        let lv = self.tape.leaf(Tensor::new(&[n], l)?, self.train_bounds);
        let uv = self.tape.leaf(Tensor::new(&[n], u)?, self.train_bounds);
        let b = BoundVars {
            l: lv,
            u: uv,
            bits,
            per_channel,
        };
        self.bounds.push((name.to_string(), b.clone()));
        Ok(b)
    }
}

impl Backend for TapeBackend<'_> {
    type T = Var;

    fn shape_of(&self, x: &Var) -> Vec<usize> {
        self.tape.value(*x).shape().to_vec()
    }

    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::Model(format!("missing parameter {name:?}")))?;
        if p.value.shape() != shape {
            return Err(mismatch("param", p.value.shape(), shape));
        }
        let v = self.tape.leaf(p.value.clone(), self.train_weights && p.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn constant(&mut self, value: Tensor) -> Var {
        self.tape.leaf(value, false)
    }

    fn quant_act(&mut self, site: &str, x: &Var) -> Result<Var> {
        let Some(qp) = self.quant.and_then(|t| t.activation(site)) else {
            return Ok(*x);
        };
        if qp.bits == PASS_THROUGH_BITS {
            return Ok(*x);
        }
        let b = self.bound_leaves(site, vec![qp.l], vec![qp.u], qp.bits, false)?;
        self.tape.fake_quant(*x, b.l, b.u, b.bits, None)
    }

    fn quant_weight(&mut self, site: &str, w: &Var) -> Result<Var> {
        let co = self.tape.value(*w).shape()[0];
        let Some(wb) = self.quant.and_then(|t| t.weight(site, co)) else {
            return Ok(*w);
        };
        if wb.bits == PASS_THROUGH_BITS {
            return Ok(*w);
        }
        let axis = wb.per_channel.then_some(0);
        let b = self.bound_leaves(site, wb.l, wb.u, wb.bits, wb.per_channel)?;
        self.tape.fake_quant(*w, b.l, b.u, b.bits, axis)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize, groups: usize) -> Result<Var> {
        self.tape.conv2d(*x, *w, b.copied(), stride, pad, groups)
    }

    fn linear_rows(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let xs = self.shape_of(x);
        let ws = self.shape_of(w);
        let x3 = self.tape.reshape(*x, &[1, xs[0], xs[1]])?;
        let w3 = self.tape.reshape(*w, &[1, ws[0], ws[1]])?;
        let y = self.tape.bmm(x3, w3, false, true)?;
        let y = self.tape.reshape(y, &[xs[0], ws[0]])?;
        self.tape.add_bcast(y, *b)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }

    fn scale(&mut self, x: &Var, c: f32) -> Var {
        self.tape.scale(*x, c)
    }

    fn scale_by(&mut self, x: &Var, s: &Var) -> Result<Var> {
        self.tape.scale_by(*x, *s)
    }

    fn exp(&mut self, x: &Var) -> Var {
        self.tape.exp(*x)
    }

    fn gelu(&mut self, x: &Var) -> Var {
        self.tape.gelu(*x)
    }

    fn max_pool2d(&mut self, x: &Var, k: usize, s: usize, p: usize) -> Result<Var> {
        self.tape.max_pool2d(*x, k, s, p)
    }

    fn layer_norm(&mut self, x: &Var, g: &Var, b: &Var, eps: f32) -> Result<Var> {
        self.tape.layer_norm(*x, *g, *b, eps)
    }

    fn softmax_last(&mut self, x: &Var) -> Result<Var> {
        self.tape.softmax_last(*x)
    }

    fn bmm(&mut self, a: &Var, b: &Var, ta: bool, tb: bool) -> Result<Var> {
        self.tape.bmm(*a, *b, ta, tb)
    }

    fn permute(&mut self, x: &Var, axes: &[usize]) -> Result<Var> {
        self.tape.permute(*x, axes)
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        self.tape.reshape(*x, shape)
    }

    fn narrow(&mut self, x: &Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.tape.narrow(*x, axis, start, len)
    }

    fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.tape.concat(parts, axis)
    }

    fn roll(&mut self, x: &Var, shifts: &[(usize, isize)]) -> Result<Var> {
        self.tape.roll(*x, shifts)
    }

    fn pad_reflect(&mut self, x: &Var, bottom: usize, right: usize) -> Result<Var> {
        self.tape.pad_reflect(*x, bottom, right)
    }

    fn add_bcast(&mut self, x: &Var, b: &Var) -> Result<Var> {
        self.tape.add_bcast(*x, *b)
    }

    fn index_rows(&mut self, table: &Var, idx: &[usize]) -> Result<Var> {
        self.tape.index_rows(*table, idx)
    }

    fn l2_normalize_last(&mut self, x: &Var, eps: f32) -> Var {
        self.tape.l2_normalize_last(*x, eps)
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        self.tape.pixel_shuffle(*x, r)
    }
}
