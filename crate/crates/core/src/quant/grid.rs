//! The uniform affine quantizer: scale, zero point, quantize-dequantize.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Bit-width that disables quantization entirely.
pub const PASS_THROUGH_BITS: u32 = 32;

/// Round half to even.
pub fn round_half_even(v: f32) -> f32 {
    v.round_ties_even()
}

/// Number of steps `2^b − 1` of a `b`-bit grid.
pub fn levels(bits: u32) -> f32 {
    ((1u64 << bits) - 1) as f32
}

/// Scale and integer zero point of the grid spanning `[l, u]`.
pub fn compute_scale_zp(l: f32, u: f32, bits: u32) -> Result<(f32, f32)> {
    if !(u > l) || !l.is_finite() || !u.is_finite() {
        return Err(invalid("compute_scale_zp", format!("need finite u > l, got l={l} u={u}")));
    }
    if bits == 0 || bits > 16 {
        return Err(invalid("compute_scale_zp", format!("unsupported bit-width {bits}")));
    }
    let g = Grid::new(l, u, bits);
    Ok((g.scale, g.zp))
}

/// Precomputed quantizer for one `(l, u, b)`. Divisions by the scale are done
/// as `x·n/(u−l)` in f64 so exact ties such as `7.5` survive.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub scale: f32,
    pub zp: f32,
    pub n: f32,
    l: f64,
    inv: f64,
}

impl Grid {
    /// Caller guarantees `u > l` and a supported width.
    pub fn new(l: f32, u: f32, bits: u32) -> Self {
        let n = levels(bits);
        let inv = n as f64 / (u as f64 - l as f64);
        let zp = (-(l as f64) * inv).round_ties_even().clamp(0.0, n as f64) as f32;
        Self {
            scale: (u - l) / n,
            zp,
            n,
            l: l as f64,
            inv,
        }
    }

    pub fn checked(l: f32, u: f32, bits: u32) -> Result<Self> {
        compute_scale_zp(l, u, bits)?;
        Ok(Self::new(l, u, bits))
    }

    /// Quantize-dequantize a single value.
    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        let q = ((x as f64 * self.inv).round_ties_even() as f32 + self.zp).clamp(0.0, self.n);
        self.scale * (q - self.zp)
    }

    /// Continuous grid coordinate `(x − l)/s`.
    #[inline]
    pub fn coord(&self, x: f32) -> f32 {
        ((x as f64 - self.l) * self.inv) as f32
    }
}

/// Clipping bounds and bit-width of one quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub l: f32,
    pub u: f32,
    pub bits: u32,
}

impl QuantParams {
    pub fn new(l: f32, u: f32, bits: u32) -> Result<Self> {
        let qp = Self { l, u, bits };
        if bits != PASS_THROUGH_BITS {
            compute_scale_zp(l, u, bits)?;
        }
        Ok(qp)
    }

    pub fn is_pass_through(&self) -> bool {
        self.bits == PASS_THROUGH_BITS
    }

    pub fn scale_zp(&self) -> Result<(f32, f32)> {
        compute_scale_zp(self.l, self.u, self.bits)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        fake_quantize(x, self)
    }
}

/// Elementwise quantize-dequantize; the identity for the pass-through width.
pub fn fake_quantize(x: &Tensor, qp: &QuantParams) -> Result<Tensor> {
    if qp.is_pass_through() {
        return Ok(x.clone());
    }
    let g = Grid::checked(qp.l, qp.u, qp.bits)?;
    Ok(x.map(move |v| g.apply(v)))
}

/// Quantize-dequantize with one `(l, u)` pair per slice of `axis`.
pub fn fake_quantize_per_channel(x: &Tensor, axis: usize, bounds: &[(f32, f32)], bits: u32) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() || shape[axis] != bounds.len() {
        return Err(invalid(
            "fake_quantize_per_channel",
            format!("{} bounds for axis {axis} of {shape:?}", bounds.len()),
        ));
    }
    if bits == PASS_THROUGH_BITS {
        return Ok(x.clone());
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let k = shape[axis];
    let grids = bounds
        .iter()
        .map(|&(l, u)| Grid::checked(l, u, bits))
        .collect::<Result<Vec<_>>>()?;
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = grids[(i / inner) % k].apply(*v);
    }
    Ok(out)
}
