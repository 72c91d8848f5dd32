//! Neural-network kernels with their adjoints.

use super::Tensor;
use crate::error::{invalid, mismatch, Result};
use crate::par;

/// 2-D convolution over N×C×H×W input with an O×(C/groups)×k×k weight.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let geo = ConvGeometry::new(x, w, bias, stride, padding, groups)?;
    let ConvGeometry {
        n, ci, h, w: wd, co, cig, kh, kw, oh, ow, ..
    } = geo;
    let cog = co / groups;
    let mut out = vec![0.0f32; n * co * oh * ow];
    let (xd, wdat) = (x.data(), w.data());
    let bd = bias.map(|b| b.data());
    par::for_each_chunk(&mut out, oh * ow, |idx, plane| {
        let (bn, o) = (idx / co, idx % co);
        let g = o / cog;
        if let Some(b) = bd {
            plane.fill(b[o]);
        }
        for cl in 0..cig {
            let c = g * cig + cl;
            let src = &xd[(bn * ci + c) * h * wd..(bn * ci + c + 1) * h * wd];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wdat[((o * cig + cl) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    geo.accumulate_tap(plane, src, wv, ky, kx);
                }
            }
        }
    });
    Tensor::new(&[n, co, oh, ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
///
/// The input or weight gradient is skipped (returned as `None`) when not requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
    let geo = ConvGeometry::new(x, w, None, stride, padding, groups)?;
    let ConvGeometry {
        n, ci, h, w: wd, co, cig, kh, kw, oh, ow, ..
    } = geo;
    if gout.shape() != [n, co, oh, ow] {
        return Err(mismatch("conv2d_backward", gout.shape(), &[n, co, oh, ow]));
    }
    let cog = co / groups;
    let (xd, wdat, gd) = (x.data(), w.data(), gout.data());

    let gx = if need_input {
        let mut gx = vec![0.0f32; n * ci * h * wd];
        par::for_each_chunk(&mut gx, h * wd, |idx, plane| {
            let (bn, c) = (idx / ci, idx % ci);
            let (g, cl) = (c / cig, c % cig);
            for o in g * cog..(g + 1) * cog {
                let gsrc = &gd[(bn * co + o) * oh * ow..(bn * co + o + 1) * oh * ow];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdat[((o * cig + cl) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        geo.scatter_tap(plane, gsrc, wv, ky, kx);
                    }
                }
            }
        });
        Some(Tensor::new(&[n, ci, h, wd], gx)?)
    } else {
        None
    };

    let gw = if need_weight {
        let mut gw = vec![0.0f32; co * cig * kh * kw];
        par::for_each_chunk(&mut gw, cig * kh * kw, |o, row| {
            let g = o / cog;
            for cl in 0..cig {
                let c = g * cig + cl;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0f64;
                        for bn in 0..n {
                            let src = &xd[(bn * ci + c) * h * wd..(bn * ci + c + 1) * h * wd];
                            let gsrc = &gd[(bn * co + o) * oh * ow..(bn * co + o + 1) * oh * ow];
                            acc += geo.correlate_tap(gsrc, src, ky, kx) as f64;
                        }
                        row[(cl * kh + ky) * kw + kx] = acc as f32;
                    }
                }
            }
        });
        Some(Tensor::new(w.shape(), gw)?)
    } else {
        None
    };

    let mut gb = vec![0.0f32; co];
    for (o, b) in gb.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for bn in 0..n {
            acc += gd[(bn * co + o) * oh * ow..(bn * co + o + 1) * oh * ow]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        *b = acc as f32;
    }
    Ok((gx, gw, Tensor::new(&[co], gb)?))
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    cig: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let (n, ci, h, wd) = x.dims4("conv2d")?;
        let (co, cig, kh, kw) = w.dims4("conv2d")?;
        if groups == 0 || ci % groups != 0 || co % groups != 0 || cig * groups != ci {
            return Err(mismatch("conv2d", x.shape(), w.shape()));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be ≥ 1"));
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(mismatch("conv2d", w.shape(), b.shape()));
            }
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(mismatch("conv2d", x.shape(), w.shape()));
        }
        Ok(Self {
            n,
            ci,
            h,
            w: wd,
            co,
            cig,
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` is inside the image.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        // largest ox with ox*stride + kx - pad <= w-1
        let lim = self.w as isize - 1 + self.pad as isize - kx as isize;
        let hi = if lim < 0 {
            0
        } else {
            ((lim as usize) / self.stride + 1).min(self.ow)
        };
        (lo, hi.max(lo))
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    fn accumulate_tap(&self, plane: &mut [f32], src: &[f32], wv: f32, ky: usize, kx: usize) {
        let (lo, hi) = self.col_range(kx);
        for oy in 0..self.oh {
            let Some(iy) = self.in_row(oy, ky) else { continue };
            let orow = &mut plane[oy * self.ow..(oy + 1) * self.ow];
            let srow = &src[iy * self.w..(iy + 1) * self.w];
            if self.stride == 1 {
                let off = lo + kx - self.pad;
                for (o, s) in orow[lo..hi].iter_mut().zip(&srow[off..off + (hi - lo)]) {
                    *o += wv * s;
                }
            } else {
                for ox in lo..hi {
                    orow[ox] += wv * srow[ox * self.stride + kx - self.pad];
                }
            }
        }
    }

    fn scatter_tap(&self, gplane: &mut [f32], gsrc: &[f32], wv: f32, ky: usize, kx: usize) {
        let (lo, hi) = self.col_range(kx);
        for oy in 0..self.oh {
            let Some(iy) = self.in_row(oy, ky) else { continue };
            let grow = &gsrc[oy * self.ow..(oy + 1) * self.ow];
            let irow = &mut gplane[iy * self.w..(iy + 1) * self.w];
            if self.stride == 1 {
                let off = lo + kx - self.pad;
                for (i, g) in irow[off..off + (hi - lo)].iter_mut().zip(&grow[lo..hi]) {
                    *i += wv * g;
                }
            } else {
                for ox in lo..hi {
                    irow[ox * self.stride + kx - self.pad] += wv * grow[ox];
                }
            }
        }
    }

    fn correlate_tap(&self, gsrc: &[f32], src: &[f32], ky: usize, kx: usize) -> f32 {
        let (lo, hi) = self.col_range(kx);
        let mut acc = 0.0f32;
        for oy in 0..self.oh {
            let Some(iy) = self.in_row(oy, ky) else { continue };
            let grow = &gsrc[oy * self.ow..(oy + 1) * self.ow];
            let srow = &src[iy * self.w..(iy + 1) * self.w];
            if self.stride == 1 {
                let off = lo + kx - self.pad;
                acc += grow[lo..hi]
                    .iter()
                    .zip(&srow[off..off + (hi - lo)])
                    .map(|(g, s)| g * s)
                    .sum::<f32>();
            } else {
                for ox in lo..hi {
                    acc += grow[ox] * srow[ox * self.stride + kx - self.pad];
                }
            }
        }
        acc
    }
}

/// Max pooling with −∞ padding.
pub fn max_pool2d(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    max_pool2d_with_indices(x, kernel, stride, padding).map(|(t, _)| t)
}

/// Max pooling that also returns, per output element, the flat in-plane index
/// of the winning input (first maximum in scan order).
pub fn max_pool2d_with_indices(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<u32>)> {
    let (n, c, h, w) = x.dims4("max_pool2d")?;
    if kernel == 0 || stride == 0 {
        return Err(invalid("max_pool2d", "kernel and stride must be ≥ 1"));
    }
    if h + 2 * padding < kernel || w + 2 * padding < kernel {
        return Err(invalid(
            "max_pool2d",
            format!("kernel {kernel} larger than padded input {}×{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    if 2 * padding > kernel {
        return Err(invalid("max_pool2d", "padding must be at most half the kernel"));
    }
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let planes: Vec<(Vec<f32>, Vec<u32>)> = par::map_range(n * c, |p| {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let mut vals = Vec::with_capacity(oh * ow);
        let mut idxs = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut arg = u32::MAX;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let i = iy as usize * w + ix as usize;
                        if arg == u32::MAX || src[i] > best {
                            best = src[i];
                            arg = i as u32;
                        }
                    }
                }
                vals.push(best);
                idxs.push(arg);
            }
        }
        (vals, idxs)
    });
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for (v, i) in planes {
        out.extend(v);
        idx.extend(i);
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, idx))
}

/// Softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(invalid("softmax", format!("axis {axis} out of rank {}", shape.len())));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    if inner == 1 {
        par::for_each_chunk(&mut out, len, |_, row| softmax_row(row));
    } else {
        let mut buf = vec![0.0f32; len];
        for o in 0..outer {
            for i in 0..inner {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = out[(o * len + k) * inner + i];
                }
                softmax_row(&mut buf);
                for (k, b) in buf.iter().enumerate() {
                    out[(o * len + k) * inner + i] = *b;
                }
            }
        }
    }
    Tensor::new(shape, out)
}

fn softmax_row(row: &mut [f32]) {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Adjoint of a last-axis softmax given its output `y`.
pub fn softmax_last_backward(y: &Tensor, gy: &Tensor) -> Result<Tensor> {
    if y.shape() != gy.shape() {
        return Err(mismatch("softmax_backward", y.shape(), gy.shape()));
    }
    let len = *y.shape().last().unwrap();
    let mut gx = vec![0.0f32; y.numel()];
    let (yd, gd) = (y.data(), gy.data());
    par::for_each_chunk(&mut gx, len, |r, row| {
        let ys = &yd[r * len..(r + 1) * len];
        let gs = &gd[r * len..(r + 1) * len];
        let dot: f32 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in row.iter_mut().zip(ys).zip(gs) {
            *o = yv * (gv - dot);
        }
    });
    Tensor::new(y.shape(), gx)
}

/// Per-token statistics saved by [`layer_norm`] for its adjoint.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub mean: Vec<f32>,
    pub rstd: Vec<f32>,
}

/// LayerNorm over the channel axis (axis 1) at every other position.
pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<(Tensor, LayerNormCache)> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(invalid("layer_norm", "need at least rank 2"));
    }
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(mismatch("layer_norm", shape, gamma.shape()));
    }
    let xd = x.data();
    let stats: Vec<(Vec<f32>, Vec<f32>)> = par::map_range(n, |b| {
        let base = b * c * s;
        let mut mean = vec![0.0f32; s];
        for ch in 0..c {
            for (m, v) in mean.iter_mut().zip(&xd[base + ch * s..base + (ch + 1) * s]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= c as f32);
        let mut var = vec![0.0f32; s];
        for ch in 0..c {
            for ((acc, v), m) in var.iter_mut().zip(&xd[base + ch * s..base + (ch + 1) * s]).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        let rstd = var.iter().map(|v| 1.0 / (v / c as f32 + eps).sqrt()).collect();
        (mean, rstd)
    });
    let mut out = vec![0.0f32; x.numel()];
    let (g, bt) = (gamma.data(), beta.data());
    par::for_each_chunk(&mut out, s, |p, row| {
        let (b, ch) = (p / c, p % c);
        let (mean, rstd) = &stats[b];
        let src = &xd[p * s..(p + 1) * s];
        for i in 0..s {
            row[i] = (src[i] - mean[i]) * rstd[i] * g[ch] + bt[ch];
        }
    });
    let mut cache = LayerNormCache {
        mean: Vec::with_capacity(n * s),
        rstd: Vec::with_capacity(n * s),
    };
    for (m, r) in stats {
        cache.mean.extend(m);
        cache.rstd.extend(r);
    }
    Ok((Tensor::new(shape, out)?, cache))
}

/// Adjoint of [`layer_norm`]: returns (dx, dgamma, dbeta).
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    cache: &LayerNormCache,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let shape = x.shape();
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    let (xd, gd, g) = (x.data(), gy.data(), gamma.data());
    let xhat = |b: usize, ch: usize, i: usize| {
        let t = b * s + i;
        (xd[(b * c + ch) * s + i] - cache.mean[t]) * cache.rstd[t]
    };
    let mut gx = vec![0.0f32; x.numel()];
    let per_batch: Vec<Vec<f32>> = par::map_range(n, |b| {
        let mut m1 = vec![0.0f32; s];
        let mut m2 = vec![0.0f32; s];
        for ch in 0..c {
            for i in 0..s {
                let gh = gd[(b * c + ch) * s + i] * g[ch];
                m1[i] += gh;
                m2[i] += gh * xhat(b, ch, i);
            }
        }
        let inv_c = 1.0 / c as f32;
        let mut out = vec![0.0f32; c * s];
        for ch in 0..c {
            for i in 0..s {
                let gh = gd[(b * c + ch) * s + i] * g[ch];
                out[ch * s + i] =
                    cache.rstd[b * s + i] * (gh - m1[i] * inv_c - xhat(b, ch, i) * m2[i] * inv_c);
            }
        }
        out
    });
    for (b, v) in per_batch.into_iter().enumerate() {
        gx[b * c * s..(b + 1) * c * s].copy_from_slice(&v);
    }
    let mut gg = vec![0.0f32; c];
    let mut gb = vec![0.0f32; c];
    for ch in 0..c {
        let (mut a, mut bsum) = (0.0f64, 0.0f64);
        for b in 0..n {
            for i in 0..s {
                let gv = gd[(b * c + ch) * s + i] as f64;
                a += gv * xhat(b, ch, i) as f64;
                bsum += gv;
            }
        }
        gg[ch] = a as f32;
        gb[ch] = bsum as f32;
    }
    Ok((
        Tensor::new(shape, gx)?,
        Tensor::new(&[c], gg)?,
        Tensor::new(&[c], gb)?,
    ))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub(crate) fn gelu_scalar(v: f32) -> f32 {
    let x = v as f64;
    (0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))) as f32
}

/// Derivative of [`gelu`]: `Φ(x) + x·φ(x)`.
pub fn gelu_grad(x: &Tensor) -> Tensor {
    x.map(|v| {
        let x = v as f64;
        let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (cdf + x * pdf) as f32
    })
}

/// Batched matrix product of rank-3 tensors, `op(a) · op(b)` per batch entry.
pub fn bmm(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
    let (bs, m, k, n) = bmm_dims(a, b, trans_a, trans_b)?;
    let mut out = vec![0.0f32; bs * m * n];
    bmm_into(a, b, trans_a, trans_b, &mut out)?;
    Tensor::new(&[bs, m, n], out)
        .map_err(|_| invalid("bmm", format!("bad output {bs}×{m}×{n} (k={k})")))
}

fn bmm_dims(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<(usize, usize, usize, usize)> {
    let ([ba, a0, a1], [bb, b0, b1]) = (a.shape(), b.shape()) else {
        return Err(mismatch("bmm", a.shape(), b.shape()));
    };
    let (m, k) = if ta { (*a1, *a0) } else { (*a0, *a1) };
    let (k2, n) = if tb { (*b1, *b0) } else { (*b0, *b1) };
    if ba != bb || k != k2 {
        return Err(mismatch("bmm", a.shape(), b.shape()));
    }
    Ok((*ba, m, k, n))
}

/// [`bmm`] writing into a caller-provided buffer of `batch·m·n` elements.
pub fn bmm_into(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool, out: &mut [f32]) -> Result<()> {
    let (bs, m, k, n) = bmm_dims(a, b, trans_a, trans_b)?;
    if out.len() != bs * m * n {
        return Err(invalid("bmm", "output buffer has the wrong length"));
    }
    let (ad, bd) = (a.data(), b.data());
    // b laid out as k×n rows for contiguous axpy
    let b_rows: Option<Vec<f32>> = trans_b.then(|| {
        let mut t = vec![0.0f32; bs * k * n];
        for bi in 0..bs {
            for j in 0..n {
                for kk in 0..k {
                    t[(bi * k + kk) * n + j] = bd[(bi * n + j) * k + kk];
                }
            }
        }
        t
    });
    let bsrc: &[f32] = b_rows.as_deref().unwrap_or(bd);
    par::for_each_chunk(out, n, |r, row| {
        let (bi, i) = (r / m, r % m);
        row.fill(0.0);
        for kk in 0..k {
            let av = if trans_a {
                ad[(bi * k + kk) * m + i]
            } else {
                ad[(bi * m + i) * k + kk]
            };
            if av == 0.0 {
                continue;
            }
            let brow = &bsrc[(bi * k + kk) * n..(bi * k + kk + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    Ok(())
}

/// Normalizes every last-axis row to unit L2 norm (norm floored at `eps`).
pub fn l2_normalize_last(x: &Tensor, eps: f32) -> Tensor {
    let len = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    par::for_each_chunk(&mut out, len, |_, row| {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(eps);
        row.iter_mut().for_each(|v| *v /= norm);
    });
    Tensor::new(x.shape(), out).expect("shape preserved")
}

/// Adjoint of [`l2_normalize_last`].
pub fn l2_normalize_last_backward(x: &Tensor, gy: &Tensor, eps: f32) -> Tensor {
    let len = *x.shape().last().unwrap();
    let mut gx = vec![0.0f32; x.numel()];
    let (xd, gd) = (x.data(), gy.data());
    par::for_each_chunk(&mut gx, len, |r, row| {
        let xs = &xd[r * len..(r + 1) * len];
        let gs = &gd[r * len..(r + 1) * len];
        let raw = xs.iter().map(|v| v * v).sum::<f32>().sqrt();
        if raw > eps {
            let dot: f32 = xs.iter().zip(gs).map(|(a, b)| a * b).sum();
            for ((o, &xv), &gv) in row.iter_mut().zip(xs).zip(gs) {
                *o = (gv - xv * dot / (raw * raw)) / raw;
            }
        } else {
            for (o, &gv) in row.iter_mut().zip(gs) {
                *o = gv / eps;
            }
        }
    });
    Tensor::new(x.shape(), gx).expect("shape preserved")
}
