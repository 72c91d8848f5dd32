//! Image quality: PSNR and SSIM.

use crate::error::{invalid, mismatch, Result};
use crate::tensor::Tensor;

/// BT.601 luma `0.299R + 0.587G + 0.114B` of an N×3×H×W tensor, as N×1×H×W.
pub fn rgb_to_luma(x: &Tensor) -> Result<Tensor> {
    weighted_luma(x, [0.299, 0.587, 0.114], 0.0)
}

/// Y channel of the studio-swing YCbCr transform used by the SR evaluation
/// protocol, for samples with range `[0, peak]`.
pub fn rgb_to_ycbcr_y(x: &Tensor, peak: f32) -> Result<Tensor> {
    weighted_luma(x, [65.481 / 255.0, 128.553 / 255.0, 24.966 / 255.0], 16.0 / 255.0 * peak)
}

fn weighted_luma(x: &Tensor, k: [f64; 3], offset: f32) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("luma")?;
    if c != 3 {
        return Err(invalid("luma", format!("expected 3 channels, got {c}")));
    }
    let hw = h * w;
    let d = x.data();
    let mut out = vec![0.0f32; n * hw];
    for b in 0..n {
        for i in 0..hw {
            let v: f64 = (0..3).map(|ch| k[ch] * d[(b * 3 + ch) * hw + i] as f64).sum();
            out[b * hw + i] = v as f32 + offset;
        }
    }
    Tensor::new(&[n, 1, h, w], out)
}

fn crop_border(x: &Tensor, crop: usize) -> Result<Tensor> {
    if crop == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4("crop")?;
    if 2 * crop >= h || 2 * crop >= w {
        return Err(invalid("psnr", format!("crop {crop} leaves nothing of {h}x{w}")));
    }
    let y = crate::tensor::narrow(x, 2, crop, h - 2 * crop)?;
    crate::tensor::narrow(&y, 3, crop, w - 2 * crop)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
/// `crop` border pixels are dropped on every side; `luma_only` compares the
/// studio-swing Y channel of RGB inputs.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f32, crop: usize, luma_only: bool) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(mismatch("psnr", a.shape(), b.shape()));
    }
    let (a, b) = if luma_only {
        (rgb_to_ycbcr_y(a, peak)?, rgb_to_ycbcr_y(b, peak)?)
    } else {
        (a.clone(), b.clone())
    };
    let (a, b) = (crop_border(&a, crop)?, crop_border(&b, crop)?);
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let p = peak as f64;
    Ok(10.0 * (p * p / mse).log10())
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_1d() -> [f64; SSIM_WIN] {
    let mut g = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filtering over valid positions only.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WIN + 1, w - SSIM_WIN + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            tmp[y * ow + xo] = (0..SSIM_WIN).map(|k| g[k] * x[y * w + xo + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..SSIM_WIN).map(|k| g[k] * tmp[(yo + k) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-plane images given as row-major H×W samples.
pub fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, peak: f32) -> Result<f64> {
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(invalid("ssim", format!("image {h}x{w} smaller than the {SSIM_WIN}x{SSIM_WIN} window")));
    }
    let g = gaussian_1d();
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter_valid(&fa, h, w, &g);
    let mu_b = filter_valid(&fb, h, w, &g);
    let saa = filter_valid(&prod(&fa, &fa), h, w, &g);
    let sbb = filter_valid(&prod(&fb, &fb), h, w, &g);
    let sab = filter_valid(&prod(&fa, &fb), h, w, &g);
    let l = peak as f64;
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean SSIM over the batch of N×1×H×W (or N×3×H×W, reduced to studio-swing luma) tensors.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f32) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(mismatch("ssim", a.shape(), b.shape()));
    }
    let (n, c, h, w) = a.dims4("ssim")?;
    let (a, b) = match c {
        1 => (a.clone(), b.clone()),
        3 => (rgb_to_ycbcr_y(a, peak)?, rgb_to_ycbcr_y(b, peak)?),
        _ => return Err(invalid("ssim", format!("expected 1 or 3 channels, got {c}"))),
    };
    let hw = h * w;
    let mut acc = 0.0;
    for i in 0..n {
        acc += ssim_plane(&a.data()[i * hw..(i + 1) * hw], &b.data()[i * hw..(i + 1) * hw], h, w, peak)?;
    }
    Ok(acc / n as f64)
}

/// Aggregate quality over a set of images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub n_images: usize,
}

impl MetricReport {
    /// Mean of per-image `(psnr, ssim)` pairs.
    pub fn mean(items: &[(f64, f64)]) -> Self {
        let n = items.len().max(1) as f64;
        Self {
            psnr: items.iter().map(|p| p.0).sum::<f64>() / n,
            ssim: items.iter().map(|p| p.1).sum::<f64>() / n,
            n_images: items.len(),
        }
    }
}

/// Formats a PSNR for text output, using `inf` for identical images.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}
