//! Straight-through gradients of the fake quantizer.
//!
//! With `s = (u − l)/n`, `n = 2^b − 1` and `q = (x − l)/s`:
//! in range `dx = 1`, `dl = (q − ⌊q⌉)/n`, `du = (⌊q⌉ − q)/n`;
//! below the grid only `dl = 1`; above it only `du = 1`.
//! The zero point is treated as continuous here, while the forward pass
//! keeps the rounded one.

use crate::error::{invalid, Result};
use crate::quant::grid::{round_half_even, Grid, PASS_THROUGH_BITS};
use crate::tensor::Tensor;

/// Local derivatives of the dequantized output, one entry per element of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteGrads {
    pub dx: Tensor,
    pub dl: Tensor,
    pub du: Tensor,
}

#[inline]
fn local(g: &Grid, x: f32) -> (f32, f32, f32) {
    let (q, n) = (g.coord(x), g.n);
    if q < 0.0 {
        (0.0, 1.0, 0.0)
    } else if q > n {
        (0.0, 0.0, 1.0)
    } else {
        let r = round_half_even(q);
        (1.0, (q - r) / n, (r - q) / n)
    }
}

/// Elementwise STE derivatives for scalar bounds.
pub fn ste_quantizer_grads(x: &Tensor, l: f32, u: f32, bits: u32) -> Result<SteGrads> {
    let g = Grid::checked(l, u, bits)?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dl = Tensor::zeros(x.shape());
    let mut du = Tensor::zeros(x.shape());
    for (i, &v) in x.data().iter().enumerate() {
        let (a, b, c) = local(&g, v);
        dx.data_mut()[i] = a;
        dl.data_mut()[i] = b;
        du.data_mut()[i] = c;
    }
    Ok(SteGrads { dx, dl, du })
}

/// Shorthand for [`ste_quantizer_grads`] on a single value: `(dx, dl, du)`.
pub fn ste_grads(x: f32, l: f32, u: f32, bits: u32) -> Result<(f32, f32, f32)> {
    Ok(local(&Grid::checked(l, u, bits)?, x))
}

/// Maps an element index to its bound index.
fn channel_of(x: &Tensor, axis: Option<usize>, nb: usize) -> Result<impl Fn(usize) -> usize> {
    let (inner, k) = match axis {
        None => {
            if nb != 1 {
                return Err(invalid("fake_quant", format!("per-tensor quantizer got {nb} bounds")));
            }
            (1, 1)
        }
        Some(a) => {
            let shape = x.shape();
            if a >= shape.len() || shape[a] != nb {
                return Err(invalid(
                    "fake_quant",
                    format!("{nb} bounds for axis {a} of {shape:?}"),
                ));
            }
            (shape[a + 1..].iter().product(), nb)
        }
    };
    Ok(move |i: usize| (i / inner) % k)
}

fn grids(l: &Tensor, u: &Tensor, bits: u32) -> Result<Vec<Grid>> {
    if l.shape() != u.shape() {
        return Err(crate::error::mismatch("fake_quant", l.shape(), u.shape()));
    }
    l.data()
        .iter()
        .zip(u.data())
        .map(|(&l, &u)| Grid::checked(l, u, bits))
        .collect()
}

pub(crate) fn fake_quant_forward(x: &Tensor, l: &Tensor, u: &Tensor, bits: u32, axis: Option<usize>) -> Result<Tensor> {
    let ch = channel_of(x, axis, l.numel())?;
    if bits == PASS_THROUGH_BITS {
        return Ok(x.clone());
    }
    let g = grids(l, u, bits)?;
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = g[ch(i)].apply(*v);
    }
    Ok(out)
}

pub(crate) fn fake_quant_backward(
    x: &Tensor,
    l: &Tensor,
    u: &Tensor,
    bits: u32,
    axis: Option<usize>,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let ch = channel_of(x, axis, l.numel())?;
    if bits == PASS_THROUGH_BITS {
        return Ok((gy.clone(), Tensor::zeros(l.shape()), Tensor::zeros(u.shape())));
    }
    let g = grids(l, u, bits)?;
    let mut gx = vec![0.0f32; x.numel()];
    let mut gl = vec![0.0f64; l.numel()];
    let mut gu = vec![0.0f64; u.numel()];
    for (i, (&v, &gv)) in x.data().iter().zip(gy.data()).enumerate() {
        let c = ch(i);
        let (a, b, d) = local(&g[c], v);
        gx[i] = a * gv;
        gl[c] += (b * gv) as f64;
        gu[c] += (d * gv) as f64;
    }
    let to = |v: Vec<f64>, t: &Tensor| Tensor::new(t.shape(), v.into_iter().map(|a| a as f32).collect());
    Ok((Tensor::new(x.shape(), gx)?, to(gl, l)?, to(gu, u)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_grid_has_zero_boundary_grad() {
        // l=-1, u=1, 4 bits: x=0.2 sits at q = 9 exactly
        let (dx, dl, du) = ste_grads(0.2, -1.0, 1.0, 4).unwrap();
        assert_eq!(dx, 1.0);
        assert!(dl.abs() < 1e-6 && du.abs() < 1e-6);
    }

    #[test]
    fn saturation() {
        assert_eq!(ste_grads(50.0, -1.0, 1.0, 4).unwrap(), (0.0, 0.0, 1.0));
        assert_eq!(ste_grads(-50.0, -1.0, 1.0, 4).unwrap(), (0.0, 1.0, 0.0));
        assert!(ste_grads(0.0, 1.0, 1.0, 4).is_err());
    }

    #[test]
    fn dx_is_exactly_zero_or_one() {
        let x = Tensor::from_fn(&[200], |i| i as f32 * 0.02 - 2.0);
        let g = ste_quantizer_grads(&x, -1.0, 1.3, 6).unwrap();
        assert!(g.dx.data().iter().all(|&d| d == 0.0 || d == 1.0));
        assert!(g.dl.data().iter().zip(g.du.data()).all(|(a, b)| (a + b).abs() < 1e-6 || *a == 1.0 || *b == 1.0));
    }

    #[test]
    fn per_channel_backward_reduces_per_slice() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5);
        let l = Tensor::new(&[2], vec![-1.0, -1.0]).unwrap();
        let u = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        let gy = Tensor::full(&[2, 3], 1.0);
        let (gx, gl, gu) = fake_quant_backward(&x, &l, &u, 4, Some(0), &gy).unwrap();
        // row 0: -2.5, -1.5 clip low, -0.5 in range; row 1: 0.5 in range, 1.5, 2.5 clip high
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!((gl.data()[0] - 2.0 - local(&Grid::new(-1.0, 1.0, 4), -0.5).1).abs() < 1e-6);
        assert!((gu.data()[1] - 2.0 - local(&Grid::new(-1.0, 1.0, 4), 0.5).2).abs() < 1e-6);
    }
}
