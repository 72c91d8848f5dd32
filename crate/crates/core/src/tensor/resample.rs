//! Spatial resampling: sub-pixel shuffle, bicubic resize and box filtering.

use super::Tensor;
use crate::error::{invalid, Result};
use crate::par;

/// Rearranges N×(C·r²)×H×W into N×C×(rH)×(rW).
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, cr, h, w) = x.dims4("pixel_shuffle")?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(invalid(
            "pixel_shuffle",
            format!("{cr} channels not divisible by r²={}", r * r),
        ));
    }
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0f32; x.numel()];
    let src = x.data();
    par::for_each_chunk(&mut out, oh * ow, |p, plane| {
        let (b, ch) = (p / c, p % c);
        for i in 0..r {
            for j in 0..r {
                let sc = ch * r * r + i * r + j;
                let splane = &src[(b * cr + sc) * h * w..(b * cr + sc + 1) * h * w];
                for y in 0..h {
                    for xx in 0..w {
                        plane[(y * r + i) * ow + xx * r + j] = splane[y * w + xx];
                    }
                }
            }
        }
    });
    Tensor::new(&[n, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c, oh, ow) = x.dims4("pixel_unshuffle")?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(invalid("pixel_unshuffle", format!("{oh}×{ow} not divisible by {r}")));
    }
    let (h, w) = (oh / r, ow / r);
    let cr = c * r * r;
    let mut out = vec![0.0f32; x.numel()];
    let src = x.data();
    par::for_each_chunk(&mut out, h * w, |p, plane| {
        let (b, sc) = (p / cr, p % cr);
        let (ch, i, j) = (sc / (r * r), (sc / r) % r, sc % r);
        let splane = &src[(b * c + ch) * oh * ow..(b * c + ch + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                plane[y * w + xx] = splane[(y * r + i) * ow + xx * r + j];
            }
        }
    });
    Tensor::new(&[n, cr, h, w], out)
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample source taps and normalized weights along one axis.
fn contributions(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    // When shrinking, the kernel is stretched by 1/scale so it also low-passes.
    let (kscale, support) = if scale < 1.0 {
        (scale, 2.0 / scale)
    } else {
        (1.0, 2.0)
    };
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for i in lo..=hi {
                let wgt = kscale * keys_cubic(kscale * (center - i as f64));
                if wgt == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, n_in as isize - 1) as usize;
                total += wgt;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(t) => t.1 += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Bicubic resize (Keys, a = -0.5, replicate edges, half-pixel centers,
/// kernel widened when shrinking) of every plane of an N×C×H×W tensor.
pub fn bicubic_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("bicubic_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(invalid("bicubic_resize", "target extents must be ≥ 1"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let cw = contributions(w, out_w);
    let ch = contributions(h, out_h);
    let mut out = vec![0.0f32; n * c * out_h * out_w];
    let src = x.data();
    par::for_each_chunk(&mut out, out_h * out_w, |p, plane| {
        let splane = &src[p * h * w..(p + 1) * h * w];
        let mut tmp = vec![0.0f64; h * out_w];
        for y in 0..h {
            let row = &splane[y * w..(y + 1) * w];
            for (ox, taps) in cw.iter().enumerate() {
                tmp[y * out_w + ox] = taps.iter().map(|&(i, wt)| row[i] as f64 * wt).sum();
            }
        }
        for (oy, taps) in ch.iter().enumerate() {
            for ox in 0..out_w {
                let v: f64 = taps.iter().map(|&(i, wt)| tmp[i * out_w + ox] * wt).sum();
                plane[oy * out_w + ox] = v as f32;
            }
        }
    });
    Tensor::new(&[n, c, out_h, out_w], out)
}

/// Box (mean) filter with an odd `window` and replicate-edge padding.
pub fn mean_filter(x: &Tensor, window: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4("mean_filter")?;
    if window == 0 || window % 2 == 0 {
        return Err(invalid("mean_filter", format!("window must be odd and ≥ 1, got {window}")));
    }
    if window == 1 {
        return Ok(x.clone());
    }
    let r = (window / 2) as isize;
    let norm = 1.0 / (window * window) as f64;
    let mut out = vec![0.0f32; x.numel()];
    let src = x.data();
    par::for_each_chunk(&mut out, h * w, |p, plane| {
        let s = &src[p * h * w..(p + 1) * h * w];
        let at = |y: isize, xx: isize| {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xc = xx.clamp(0, w as isize - 1) as usize;
            s[yy * w + xc] as f64
        };
        // horizontal pass then vertical pass
        let mut tmp = vec![0.0f64; h * w];
        for y in 0..h {
            for xx in 0..w {
                tmp[y * w + xx] = (-r..=r).map(|d| at(y as isize, xx as isize + d)).sum();
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let v: f64 = (-r..=r)
                    .map(|d| tmp[(y as isize + d).clamp(0, h as isize - 1) as usize * w + xx])
                    .sum();
                plane[y * w + xx] = (v * norm) as f32;
            }
        }
    });
    Tensor::new(x.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shuffle_shape_and_index_formula() {
        let x = Tensor::from_fn(&[1, 4, 2, 2], |i| i as f32);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for oy in 0..4 {
            for ox in 0..4 {
                let ch = (oy % 2) * 2 + ox % 2;
                let expect = x.at4(0, ch, oy / 2, ox / 2);
                assert_eq!(y.at4(0, 0, oy, ox), expect);
            }
        }
        assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
        assert!(pixel_shuffle(&Tensor::zeros(&[1, 3, 2, 2]), 2).is_err());
    }

    #[test]
    fn bicubic_constant_and_identity() {
        let c = Tensor::full(&[1, 2, 9, 7], 7.0);
        for (oh, ow) in [(3, 4), (18, 14), (5, 11), (1, 1)] {
            let y = bicubic_resize(&c, oh, ow).unwrap();
            assert!(y.data().iter().all(|v| (v - 7.0).abs() < 1e-5));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[1, 1, 6, 5], |_| rng.gen());
        let y = bicubic_resize(&x, 6, 5).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-6);
    }

    #[test]
    fn bicubic_upscale_uses_four_taps() {
        // upscaling with the plain Keys kernel: interior sample of a linear ramp stays linear
        let x = Tensor::from_fn(&[1, 1, 1, 8], |i| i as f32);
        let y = bicubic_resize(&x, 1, 16).unwrap();
        for ox in 4..12 {
            let center = (ox as f64 + 0.5) / 2.0 - 0.5;
            assert!((y.data()[ox] as f64 - center).abs() < 1e-5);
        }
    }

    #[test]
    fn mean_filter_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[1, 1, 7, 7], |_| rng.gen());
        assert_eq!(mean_filter(&x, 1).unwrap(), x);
        assert!(mean_filter(&x, 4).is_err());
        let c = Tensor::full(&[1, 1, 5, 5], 2.5);
        assert!(mean_filter(&c, 3).unwrap().data().iter().all(|v| (v - 2.5).abs() < 1e-6));
        let y = mean_filter(&x, 3).unwrap();
        for yy in 0..7i32 {
            for xx in 0..7i32 {
                let mut s = 0.0f64;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        s += x.at4(0, 0, (yy + dy).clamp(0, 6) as usize, (xx + dx).clamp(0, 6) as usize) as f64;
                    }
                }
                assert!((y.at4(0, 0, yy as usize, xx as usize) as f64 - s / 9.0).abs() < 1e-6);
            }
        }
    }
}
