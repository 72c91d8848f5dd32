//! Shape-manipulating kernels: permutation, slicing, concatenation, cyclic
//! shifts, reflective padding and broadcasting helpers.

use super::{strides, Tensor};
use crate::error::{invalid, mismatch, Result};

/// Reorders axes so that output axis `i` is input axis `axes[i]`.
pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(invalid("permute", format!("{axes:?} is not a permutation of rank {rank}")));
    }
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let src = x.data();
    // Innermost axis handled as a strided run.
    let last = rank - 1;
    let inner = out_shape[last];
    let inner_stride = src_strides[last];
    let mut idx = vec![0usize; rank];
    let outer: usize = n / inner;
    for _ in 0..outer {
        let base: usize = (0..last).map(|d| idx[d] * src_strides[d]).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|k| src[base + k * inner_stride]));
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

/// Slice of `len` entries starting at `start` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(invalid(
            "narrow",
            format!("axis {axis} range {start}..{} out of {shape:?}", start + len),
        ));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * shape[axis] + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Tensor::new(&out_shape, out)
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| invalid("concat", "no tensors given"))?;
    let shape = first.shape();
    if axis >= shape.len() {
        return Err(invalid("concat", format!("axis {axis} out of rank {}", shape.len())));
    }
    for p in parts {
        let ok = p.rank() == shape.len()
            && p.shape().iter().zip(shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(mismatch("concat", shape, p.shape()));
        }
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let run = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * run..(o + 1) * run]);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = total_axis;
    Tensor::new(&out_shape, out)
}

/// Cyclic shift: `out[i] = x[i - shift]` along each listed axis (shifts may be negative).
pub fn roll(x: &Tensor, shifts: &[(usize, isize)]) -> Result<Tensor> {
    let shape = x.shape();
    for &(a, _) in shifts {
        if a >= shape.len() {
            return Err(invalid("roll", format!("axis {a} out of rank {}", shape.len())));
        }
    }
    let mut cur = x.clone();
    for &(axis, shift) in shifts {
        let len = shape[axis] as isize;
        let s = shift.rem_euclid(len) as usize;
        if s == 0 {
            continue;
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut out = vec![0.0; cur.numel()];
        let src = cur.data();
        for o in 0..outer {
            for i in 0..n {
                let dst = (i + s) % n;
                let a = (o * n + i) * inner;
                let b = (o * n + dst) * inner;
                out[b..b + inner].copy_from_slice(&src[a..a + inner]);
            }
        }
        cur = Tensor::new(shape, out)?;
    }
    Ok(cur)
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflective padding of the bottom and right edges of an N×C×H×W tensor.
pub fn pad_reflect(x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("pad_reflect")?;
    if bottom == 0 && right == 0 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h + bottom, w + right);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            let sy = reflect(y as isize, h);
            let row = &plane[sy * w..(sy + 1) * w];
            out.extend_from_slice(row);
            out.extend((w..ow).map(|xx| row[reflect(xx as isize, w)]));
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Adjoint of [`pad_reflect`]: folds a padded gradient back onto the source extent.
pub fn unpad_reflect_grad(g: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, oh, ow) = g.dims4("unpad_reflect_grad")?;
    if oh < h || ow < w {
        return Err(invalid("unpad_reflect_grad", "target larger than gradient"));
    }
    let mut out = vec![0.0f32; n * c * h * w];
    for p in 0..n * c {
        let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            let sy = reflect(y as isize, h);
            for xx in 0..ow {
                dst[sy * w + reflect(xx as isize, w)] += src[y * ow + xx];
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// `x + b` where `b`'s shape equals a trailing suffix of `x`'s shape.
pub fn add_bcast(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (xs, bs) = (x.shape(), b.shape());
    if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
        return Err(mismatch("add_bcast", xs, bs));
    }
    let m = b.numel();
    let mut out = x.data().to_vec();
    for chunk in out.chunks_mut(m) {
        for (o, v) in chunk.iter_mut().zip(b.data()) {
            *o += v;
        }
    }
    Tensor::new(xs, out)
}

/// Sums away leading axes so the result has shape `suffix`.
pub fn sum_leading(x: &Tensor, suffix: &[usize]) -> Result<Tensor> {
    let xs = x.shape();
    if suffix.len() > xs.len() || xs[xs.len() - suffix.len()..] != *suffix {
        return Err(mismatch("sum_leading", xs, suffix));
    }
    let m: usize = suffix.iter().product();
    let mut acc = vec![0.0f64; m];
    for chunk in x.data().chunks(m) {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += *v as f64;
        }
    }
    Tensor::new(suffix, acc.into_iter().map(|v| v as f32).collect())
}

/// Gathers rows of a rank-2 table: `out[i] = table[idx[i]]`.
pub fn index_rows(table: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let [rows, cols] = table.shape()[..] else {
        return Err(invalid("index_rows", format!("table must be rank 2, got {:?}", table.shape())));
    };
    let mut out = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        if i >= rows {
            return Err(invalid("index_rows", format!("row {i} out of {rows}")));
        }
        out.extend_from_slice(&table.data()[i * cols..(i + 1) * cols]);
    }
    Tensor::new(&[idx.len(), cols], out)
}

/// Adjoint of [`index_rows`]: scatter-adds rows of `g` into a `rows`-row table.
pub fn scatter_rows(g: &Tensor, idx: &[usize], rows: usize) -> Result<Tensor> {
    let [n, cols] = g.shape()[..] else {
        return Err(invalid("scatter_rows", "gradient must be rank 2"));
    };
    if n != idx.len() {
        return Err(invalid("scatter_rows", "index length mismatch"));
    }
    let mut out = vec![0.0f32; rows * cols];
    for (r, &i) in idx.iter().enumerate() {
        for c in 0..cols {
            out[i * cols + c] += g.data()[r * cols + c];
        }
    }
    Tensor::new(&[rows, cols], out)
}
