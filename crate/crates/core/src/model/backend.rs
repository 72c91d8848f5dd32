//! The op interface the network is written against, and the plain
//! tensor-evaluating implementation.

use crate::error::{mismatch, Error, Result};
use crate::quant::{fake_quantize, fake_quantize_per_channel, QuantTable};
use crate::tensor::{self, Tensor};

use super::store::ParamStore;

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with this standard deviation, redrawn outside ±2σ.
    TruncNormal(f32),
    /// Uniform in `±1/√fan_in`, fan-in taken from all but the first extent.
    FanInUniform,
}

/// A parameter as declared by the network code.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Operations used by the network. Implementations evaluate tensors, record a
/// differentiable tape, or only propagate shapes.
pub trait Backend {
    type T: Clone;

    fn shape_of(&self, x: &Self::T) -> Vec<usize>;
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Self::T>;
    fn constant(&mut self, value: Tensor) -> Self::T;

    /// Hook at an activation quantization site.
    fn quant_act(&mut self, site: &str, x: &Self::T) -> Result<Self::T>;
    /// Hook at a weight quantization site; `site` is the parameter name.
    fn quant_weight(&mut self, site: &str, w: &Self::T) -> Result<Self::T>;

    fn conv2d(
        &mut self,
        x: &Self::T,
        w: &Self::T,
        b: Option<&Self::T>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self::T>;
    /// `x·wᵀ + b` for `x` of shape R×in, `w` out×in, `b` out.
    fn linear_rows(&mut self, x: &Self::T, w: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn scale(&mut self, x: &Self::T, c: f32) -> Self::T;
    fn scale_by(&mut self, x: &Self::T, s: &Self::T) -> Result<Self::T>;
    fn exp(&mut self, x: &Self::T) -> Self::T;
    fn gelu(&mut self, x: &Self::T) -> Self::T;
    fn max_pool2d(&mut self, x: &Self::T, k: usize, s: usize, p: usize) -> Result<Self::T>;
    fn layer_norm(&mut self, x: &Self::T, g: &Self::T, b: &Self::T, eps: f32) -> Result<Self::T>;
    fn softmax_last(&mut self, x: &Self::T) -> Result<Self::T>;
    fn bmm(&mut self, a: &Self::T, b: &Self::T, ta: bool, tb: bool) -> Result<Self::T>;
    fn permute(&mut self, x: &Self::T, axes: &[usize]) -> Result<Self::T>;
    fn reshape(&mut self, x: &Self::T, shape: &[usize]) -> Result<Self::T>;
    fn narrow(&mut self, x: &Self::T, axis: usize, start: usize, len: usize) -> Result<Self::T>;
    fn concat(&mut self, parts: &[Self::T], axis: usize) -> Result<Self::T>;
    fn roll(&mut self, x: &Self::T, shifts: &[(usize, isize)]) -> Result<Self::T>;
    fn pad_reflect(&mut self, x: &Self::T, bottom: usize, right: usize) -> Result<Self::T>;
    fn add_bcast(&mut self, x: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn index_rows(&mut self, table: &Self::T, idx: &[usize]) -> Result<Self::T>;
    fn l2_normalize_last(&mut self, x: &Self::T, eps: f32) -> Self::T;
    fn pixel_shuffle(&mut self, x: &Self::T, r: usize) -> Result<Self::T>;
}

/// Callback receiving every activation at its quantization site, before quantization.
pub type Observer<'a> = &'a mut dyn FnMut(&str, &Tensor);

/// Evaluates on tensors, optionally fake-quantizing at the sites in a table.
pub struct EvalBackend<'a> {
    store: &'a ParamStore,
    quant: Option<&'a QuantTable>,
    observer: Option<Observer<'a>>,
}

impl<'a> EvalBackend<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            quant: None,
            observer: None,
        }
    }

    pub fn with_quant(mut self, table: &'a QuantTable) -> Self {
        self.quant = Some(table);
        self
    }

    pub fn with_observer(mut self, obs: Observer<'a>) -> Self {
        self.observer = Some(obs);
        self
    }
}

/// Weight fake-quantization shared by evaluating backends.
pub(crate) fn quantize_weight(table: &QuantTable, site: &str, w: &Tensor) -> Result<Tensor> {
    let co = w.shape().first().copied().unwrap_or(1);
    match table.weight(site, co) {
        None => Ok(w.clone()),
        Some(wb) if wb.per_channel => {
            let bounds: Vec<(f32, f32)> = wb.l.iter().copied().zip(wb.u.iter().copied()).collect();
            fake_quantize_per_channel(w, 0, &bounds, wb.bits)
        }
        Some(_) => fake_quantize(w, &table.get(site).expect("checked").params),
    }
}

impl Backend for EvalBackend<'_> {
    type T = Tensor;

    fn shape_of(&self, x: &Tensor) -> Vec<usize> {
        x.shape().to_vec()
    }

    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor> {
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::Model(format!("missing parameter {name:?}")))?;
        if p.value.shape() != shape {
            return Err(mismatch("param", p.value.shape(), shape));
        }
        Ok(p.value.clone())
    }

    fn constant(&mut self, value: Tensor) -> Tensor {
        value
    }

    fn quant_act(&mut self, site: &str, x: &Tensor) -> Result<Tensor> {
        if let Some(obs) = self.observer.as_mut() {
            obs(site, x);
        }
        match self.quant.and_then(|t| t.activation(site)) {
            Some(qp) => fake_quantize(x, &qp),
            None => Ok(x.clone()),
        }
    }

    fn quant_weight(&mut self, site: &str, w: &Tensor) -> Result<Tensor> {
        match self.quant {
            Some(t) => quantize_weight(t, site, w),
            None => Ok(w.clone()),
        }
    }

    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize, groups: usize) -> Result<Tensor> {
        tensor::conv2d(x, w, b, stride, pad, groups)
    }

    fn linear_rows(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        let x3 = x.reshape(&[1, xs[0], xs[1]])?;
        let w3 = w.reshape(&[1, w.shape()[0], w.shape()[1]])?;
        let y = tensor::bmm(&x3, &w3, false, true)?;
        let y = y.into_reshaped(&[xs[0], w.shape()[0]])?;
        tensor::add_bcast(&y, b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }

    fn scale(&mut self, x: &Tensor, c: f32) -> Tensor {
        x.scale(c)
    }

    fn scale_by(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        Ok(x.scale(s.item()))
    }

    fn exp(&mut self, x: &Tensor) -> Tensor {
        x.map(f32::exp)
    }

    fn gelu(&mut self, x: &Tensor) -> Tensor {
        tensor::gelu(x)
    }

    fn max_pool2d(&mut self, x: &Tensor, k: usize, s: usize, p: usize) -> Result<Tensor> {
        tensor::max_pool2d(x, k, s, p)
    }

    fn layer_norm(&mut self, x: &Tensor, g: &Tensor, b: &Tensor, eps: f32) -> Result<Tensor> {
        Ok(tensor::layer_norm(x, g, b, eps)?.0)
    }

    fn softmax_last(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::softmax(x, x.rank() - 1)
    }

    fn bmm(&mut self, a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        tensor::bmm(a, b, ta, tb)
    }

    fn permute(&mut self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        tensor::permute(x, axes)
    }

    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        x.reshape(shape)
    }

    fn narrow(&mut self, x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        tensor::narrow(x, axis, start, len)
    }

    fn concat(&mut self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        tensor::concat(&refs, axis)
    }

    fn roll(&mut self, x: &Tensor, shifts: &[(usize, isize)]) -> Result<Tensor> {
        tensor::roll(x, shifts)
    }

    fn pad_reflect(&mut self, x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
        tensor::pad_reflect(x, bottom, right)
    }

    fn add_bcast(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::add_bcast(x, b)
    }

    fn index_rows(&mut self, table: &Tensor, idx: &[usize]) -> Result<Tensor> {
        tensor::index_rows(table, idx)
    }

    fn l2_normalize_last(&mut self, x: &Tensor, eps: f32) -> Tensor {
        tensor::l2_normalize_last(x, eps)
    }

    fn pixel_shuffle(&mut self, x: &Tensor, r: usize) -> Result<Tensor> {
        tensor::pixel_shuffle(x, r)
    }
}
