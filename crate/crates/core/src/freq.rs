//! Frequency-domain experiments: dropping high-frequency components,
//! drop-ratio curves, box-filter degradation and spectrum summaries.

use crate::error::{invalid, mismatch, Error, Result};
use crate::metrics::{psnr, rgb_to_luma};
use crate::tensor::{self, fft2_plane, fftshift_index, ifft2_plane, Tensor};

/// Row-major bin indices of an `h×w` spectrum ordered from the center
/// outwards: by distance from `(h/2, w/2)` in the shifted layout, ties by
/// shifted row-major index.
pub fn distance_order(h: usize, w: usize) -> Vec<usize> {
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let mut bins: Vec<(f64, usize)> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (((y - cy).powi(2) + (x - cx).powi(2)).sqrt(), i)
        })
        .collect();
    bins.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    bins.into_iter().map(|(_, i)| i).collect()
}

/// Zeros the `⌊γ·H·W⌋` bins farthest from the spectrum center (plus the
/// conjugate partner of each) in every plane and transforms back. `γ = 0`
/// returns the input unchanged.
pub fn drop_high_freq(image: &Tensor, gamma: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid("drop_high_freq", format!("gamma must be in [0, 1], got {gamma}")));
    }
    let (_, _, h, w) = image.dims4("drop_high_freq")?;
    let l = h * w;
    let count = (gamma * l as f64).floor() as usize;
    if count == 0 {
        return Ok(image.clone());
    }
    let order = distance_order(h, w);
    // shifted index → natural index
    let natural = |s: usize| {
        let (sy, sx) = (s / w, s % w);
        let ky = (sy + h - fftshift_index(0, h)) % h;
        let kx = (sx + w - fftshift_index(0, w)) % w;
        ky * w + kx
    };
    // Close the dropped set under conjugation (k ↔ −k) so the spectrum stays
    // Hermitian: the result is then real and the operation a projection.
    let mut mask = vec![false; l];
    for &s in &order[l - count..] {
        let k = natural(s);
        let (ky, kx) = (k / w, k % w);
        mask[k] = true;
        mask[((h - ky) % h) * w + (w - kx) % w] = true;
    }
    let dropped: Vec<usize> = (0..l).filter(|&k| mask[k]).collect();
    let mut out = image.clone();
    for plane in out.data_mut().chunks_mut(l) {
        let mut g = fft2_plane(plane, h, w);
        for &k in &dropped {
            g.re[k] = 0.0;
            g.im[k] = 0.0;
        }
        plane.copy_from_slice(&ifft2_plane(&g));
    }
    Ok(out)
}

/// Box-filter degradation with an odd window `theta`.
pub fn mean_filter_degrade(image: &Tensor, theta: usize) -> Result<Tensor> {
    tensor::mean_filter(image, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropMode {
    /// Super-resolved output compared with the equally degraded target.
    D,
    /// Super-resolved output compared with the pristine target.
    E,
}

impl std::str::FromStr for DropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D" | "d" => Ok(Self::D),
            "E" | "e" => Ok(Self::E),
            _ => Err(invalid("DropMode", format!("unknown mode {s:?} (expected D or E)"))),
        }
    }
}

/// How the target image is degraded before downsampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degradation {
    Drop(f64),
    MeanFilter(usize),
}

impl Degradation {
    pub fn apply(&self, hr: &Tensor) -> Result<Tensor> {
        match *self {
            Self::Drop(g) => drop_high_freq(hr, g),
            Self::MeanFilter(t) => mean_filter_degrade(hr, t),
        }
    }

    pub fn x(&self) -> f64 {
        match *self {
            Self::Drop(g) => g,
            Self::MeanFilter(t) => t as f64,
        }
    }
}

/// PSNR settings used when measuring a curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrOpts {
    pub peak: f32,
    pub crop: usize,
    pub luma: bool,
}

impl Default for PsnrOpts {
    fn default() -> Self {
        Self {
            peak: 1.0,
            crop: 0,
            luma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropCurve {
    pub mode: DropMode,
    pub points: Vec<(f64, f64)>,
}

fn mean_psnr<F>(hr_set: &[Tensor], scale: usize, deg: Option<Degradation>, mode: DropMode, opts: PsnrOpts, sr: &F) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let mut acc = 0.0;
    for hr in hr_set {
        let degraded = match deg {
            Some(d) => d.apply(hr)?,
            None => hr.clone(),
        };
        let lr = crate::data::degrade(&degraded, scale)?;
        let out = sr(&lr)?;
        let target = match mode {
            DropMode::D => &degraded,
            DropMode::E => hr,
        };
        let target = crate::data::crop_to_multiple(target, scale)?;
        acc += psnr(&out, &target, opts.peak, opts.crop, opts.luma)?;
    }
    Ok(acc / hr_set.len() as f64)
}

/// Relative PSNR change for each degradation: mode D gives
/// `(P(0) − P_D)/P(0)`, mode E gives `(P_E − P(0))/P(0)`. PSNRs are averaged
/// over the set before forming the ratio.
pub fn drop_ratio_curve<F>(
    sr: F,
    hr_set: &[Tensor],
    degradations: &[Degradation],
    mode: DropMode,
    scale: usize,
    opts: PsnrOpts,
) -> Result<DropCurve>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if hr_set.is_empty() {
        return Err(Error::Dataset("drop-ratio curve needs at least one image".into()));
    }
    if degradations.is_empty() {
        return Err(invalid("drop_ratio_curve", "empty degradation list"));
    }
    let p0 = mean_psnr(hr_set, scale, None, mode, opts, &sr)?;
    let mut points = Vec::with_capacity(degradations.len());
    for d in degradations {
        let p = if matches!(d, Degradation::Drop(g) if *g == 0.0) {
            p0
        } else {
            mean_psnr(hr_set, scale, Some(*d), mode, opts, &sr)?
        };
        let ratio = match mode {
            DropMode::D => (p0 - p) / p0,
            DropMode::E => (p - p0) / p0,
        };
        points.push((d.x(), ratio));
    }
    Ok(DropCurve { mode, points })
}

/// Radially averaged log-amplitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub radii: Vec<usize>,
    pub values: Vec<f64>,
}

/// Mean of a centered `h×w` map over integer-radius rings around `(h/2, w/2)`.
pub fn radial_mean(map: &[f64], h: usize, w: usize) -> SpectrumReport {
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let max_r = ((cy.max(h as f64 - 1.0 - cy)).powi(2) + (cx.max(w as f64 - 1.0 - cx)).powi(2))
        .sqrt()
        .round() as usize;
    let mut sum = vec![0.0f64; max_r + 1];
    let mut cnt = vec![0usize; max_r + 1];
    for y in 0..h {
        for x in 0..w {
            let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt().round() as usize;
            sum[r] += map[y * w + x];
            cnt[r] += 1;
        }
    }
    let mut radii = Vec::new();
    let mut values = Vec::new();
    for r in 0..=max_r {
        if cnt[r] > 0 {
            radii.push(r);
            values.push(sum[r] / cnt[r] as f64);
        }
    }
    SpectrumReport { radii, values }
}

fn gray_plane(image: &Tensor) -> Result<(Vec<f32>, usize, usize)> {
    let (n, c, h, w) = image.dims4("spectrum")?;
    if n != 1 {
        return Err(invalid("spectrum", format!("expected a single image, got batch {n}")));
    }
    let g = match c {
        1 => image.clone(),
        3 => rgb_to_luma(image)?,
        _ => return Err(invalid("spectrum", format!("expected 1 or 3 channels, got {c}"))),
    };
    Ok((g.into_data(), h, w))
}

/// Radial profile of `log(1 + |F|)` of the luma plane.
pub fn log_amplitude_spectrum(image: &Tensor) -> Result<SpectrumReport> {
    let (g, h, w) = gray_plane(image)?;
    let mag = fft2_plane(&g, h, w).shifted_magnitude();
    let logs: Vec<f64> = mag.iter().map(|&m| (m as f64).ln_1p()).collect();
    Ok(radial_mean(&logs, h, w))
}

/// Centered map `| |F(a)| − |F(b)| |` of the luma planes, as 1×1×H×W.
pub fn residual_spectrum(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch("residual_spectrum", a.shape(), b.shape()));
    }
    let (ga, h, w) = gray_plane(a)?;
    let (gb, _, _) = gray_plane(b)?;
    let ma = fft2_plane(&ga, h, w).shifted_magnitude();
    let mb = fft2_plane(&gb, h, w).shifted_magnitude();
    let d: Vec<f32> = ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).collect();
    Tensor::new(&[1, 1, h, w], d)
}
