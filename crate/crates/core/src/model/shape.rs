//! Shape-only backend: enumerates parameters and quantization sites and
//! counts multiply-accumulates without touching data.

use std::collections::HashSet;

use super::backend::{Backend, Init, ParamDecl};
use crate::error::{invalid, mismatch, Result};
use crate::tensor::Tensor;

/// Multiply-accumulate totals by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCount {
    /// Spatial convolutions (kernel larger than 1×1, including depth-wise).
    pub conv: u64,
    /// 1×1 convolutions and row-wise linear layers.
    pub linear: u64,
    /// Activation-by-activation matrix products inside attention.
    pub attention: u64,
}

#[derive(Debug, Default)]
pub struct ShapeBackend {
    pub decls: Vec<ParamDecl>,
    pub activation_sites: Vec<String>,
    pub weight_sites: Vec<(String, Vec<usize>)>,
    pub macs: MacCount,
    seen: HashSet<String>,
}

impl ShapeBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

type S = Vec<usize>;

impl Backend for ShapeBackend {
    type T = S;

    fn shape_of(&self, x: &S) -> Vec<usize> {
        x.clone()
    }

    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<S> {
        if self.seen.insert(name.to_string()) {
            self.decls.push(ParamDecl {
                name: name.to_string(),
                shape: shape.to_vec(),
                init,
            });
        }
        Ok(shape.to_vec())
    }

    fn constant(&mut self, value: Tensor) -> S {
        value.shape().to_vec()
    }

    fn quant_act(&mut self, site: &str, x: &S) -> Result<S> {
        if !self.activation_sites.iter().any(|s| s == site) {
            self.activation_sites.push(site.to_string());
        }
        Ok(x.clone())
    }

    fn quant_weight(&mut self, site: &str, w: &S) -> Result<S> {
        if !self.weight_sites.iter().any(|(s, _)| s == site) {
            self.weight_sites.push((site.to_string(), w.clone()));
        }
        Ok(w.clone())
    }

    fn conv2d(&mut self, x: &S, w: &S, _b: Option<&S>, stride: usize, pad: usize, groups: usize) -> Result<S> {
        let (&[n, ci, h, wd], &[co, cig, kh, kw]) = (&x[..], &w[..]) else {
            return Err(invalid("conv2d", "expected rank-4 input and weight"));
        };
        if ci != cig * groups || co % groups != 0 {
            return Err(mismatch("conv2d", x, w));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let macs = (n * co * oh * ow * cig * kh * kw) as u64;
        if kh * kw == 1 {
            self.macs.linear += macs;
        } else {
            self.macs.conv += macs;
        }
        Ok(vec![n, co, oh, ow])
    }

    fn linear_rows(&mut self, x: &S, w: &S, _b: &S) -> Result<S> {
        if x.len() != 2 || w.len() != 2 || x[1] != w[1] {
            return Err(mismatch("linear_rows", x, w));
        }
        self.macs.linear += (x[0] * x[1] * w[0]) as u64;
        Ok(vec![x[0], w[0]])
    }

    fn add(&mut self, a: &S, b: &S) -> Result<S> {
        if a != b {
            return Err(mismatch("add", a, b));
        }
        Ok(a.clone())
    }

    fn mul(&mut self, a: &S, b: &S) -> Result<S> {
        self.add(a, b)
    }

    fn scale(&mut self, x: &S, _c: f32) -> S {
        x.clone()
    }

    fn scale_by(&mut self, x: &S, _s: &S) -> Result<S> {
        Ok(x.clone())
    }

    fn exp(&mut self, x: &S) -> S {
        x.clone()
    }

    fn gelu(&mut self, x: &S) -> S {
        x.clone()
    }

    fn max_pool2d(&mut self, x: &S, k: usize, s: usize, p: usize) -> Result<S> {
        let [n, c, h, w] = x[..] else {
            return Err(invalid("max_pool2d", "expected rank 4"));
        };
        Ok(vec![n, c, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1])
    }

    fn layer_norm(&mut self, x: &S, _g: &S, _b: &S, _eps: f32) -> Result<S> {
        Ok(x.clone())
    }

    fn softmax_last(&mut self, x: &S) -> Result<S> {
        Ok(x.clone())
    }

    fn bmm(&mut self, a: &S, b: &S, ta: bool, tb: bool) -> Result<S> {
        let (&[ba, a1, a2], &[bb, b1, b2]) = (&a[..], &b[..]) else {
            return Err(invalid("bmm", "expected rank-3 operands"));
        };
        let (m, k) = if ta { (a2, a1) } else { (a1, a2) };
        let (k2, n) = if tb { (b2, b1) } else { (b1, b2) };
        if ba != bb || k != k2 {
            return Err(mismatch("bmm", a, b));
        }
        self.macs.attention += (ba * m * k * n) as u64;
        Ok(vec![ba, m, n])
    }

    fn permute(&mut self, x: &S, axes: &[usize]) -> Result<S> {
        if axes.len() != x.len() {
            return Err(invalid("permute", "rank mismatch"));
        }
        Ok(axes.iter().map(|&a| x[a]).collect())
    }

    fn reshape(&mut self, x: &S, shape: &[usize]) -> Result<S> {
        if x.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(mismatch("reshape", x, shape));
        }
        Ok(shape.to_vec())
    }

    fn narrow(&mut self, x: &S, axis: usize, start: usize, len: usize) -> Result<S> {
        if axis >= x.len() || start + len > x[axis] {
            return Err(invalid("narrow", "range out of bounds"));
        }
        let mut s = x.clone();
        s[axis] = len;
        Ok(s)
    }

    fn concat(&mut self, parts: &[S], axis: usize) -> Result<S> {
        let mut s = parts[0].clone();
        s[axis] = parts.iter().map(|p| p[axis]).sum();
        Ok(s)
    }

    fn roll(&mut self, x: &S, _shifts: &[(usize, isize)]) -> Result<S> {
        Ok(x.clone())
    }

    fn pad_reflect(&mut self, x: &S, bottom: usize, right: usize) -> Result<S> {
        let mut s = x.clone();
        s[2] += bottom;
        s[3] += right;
        Ok(s)
    }

    fn add_bcast(&mut self, x: &S, b: &S) -> Result<S> {
        if b.len() > x.len() || x[x.len() - b.len()..] != b[..] {
            return Err(mismatch("add_bcast", x, b));
        }
        Ok(x.clone())
    }

    fn index_rows(&mut self, table: &S, idx: &[usize]) -> Result<S> {
        Ok(vec![idx.len(), table[1]])
    }

    fn l2_normalize_last(&mut self, x: &S, _eps: f32) -> S {
        x.clone()
    }

    fn pixel_shuffle(&mut self, x: &S, r: usize) -> Result<S> {
        let [n, c, h, w] = x[..] else {
            return Err(invalid("pixel_shuffle", "expected rank 4"));
        };
        if c % (r * r) != 0 {
            return Err(invalid("pixel_shuffle", "channels not divisible by r²"));
        }
        Ok(vec![n, c / (r * r), h * r, w * r])
    }
}
