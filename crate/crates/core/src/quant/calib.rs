//! Error criteria and range estimators for one tensor.

use super::grid::{Grid, QuantParams};
use super::site::MeasureType;
use crate::error::{invalid, Result};
use crate::tensor::{fft2_plane, Tensor};

/// Width used when a tensor holds a single value.
pub const DEGENERATE_WIDTH: f32 = 1e-6;

// Trailing two extents as the FFT plane; rank-1 tensors are one row.
fn planes(x: &Tensor) -> (usize, usize) {
    let s = x.shape();
    match s.len() {
        0 => (1, 1),
        1 => (1, s[0]),
        r => (s[r - 2], s[r - 1]),
    }
}

/// Quantization error score of `x` under bounds `(l, u)`: mean absolute error
/// of the values (FEATURE) or of the per-plane FFT magnitudes (FGO), averaged
/// over planes.
pub fn fcmp(bits: u32, l: f32, u: f32, measure: MeasureType, x: &Tensor) -> Result<f64> {
    let g = Grid::checked(l, u, bits)?;
    Ok(fcmp_grid(&g, measure, x))
}

pub(crate) fn fcmp_grid(g: &Grid, measure: MeasureType, x: &Tensor) -> f64 {
    let d = x.data();
    if d.is_empty() {
        return 0.0;
    }
    match measure {
        MeasureType::Feature => {
            // every channel has the same size, so the mean of channel means is the global mean
            let s: f64 = d.iter().map(|&v| (v - g.apply(v)).abs() as f64).sum();
            s / d.len() as f64
        }
        MeasureType::Fgo => {
            let (h, w) = planes(x);
            let n = d.len() / (h * w);
            let per_plane: f64 = (0..n)
                .map(|p| {
                    let plane = &d[p * h * w..(p + 1) * h * w];
                    let q: Vec<f32> = plane.iter().map(|&v| g.apply(v)).collect();
                    let a = fft2_plane(plane, h, w).magnitude();
                    let b = fft2_plane(&q, h, w).magnitude();
                    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs() as f64).sum();
                    s / (h * w) as f64
                })
                .sum();
            per_plane / n as f64
        }
    }
}

/// Outcome of adaptive dual clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcResult {
    pub l: f32,
    pub u: f32,
    /// Score at the returned bounds.
    pub gamma: f64,
    /// Score at the initial bounds followed by the score after each accepted move.
    pub trace: Vec<f64>,
}

fn min_max(x: &Tensor) -> Result<(f32, f32)> {
    if x.numel() == 0 {
        return Err(invalid("calibrate", "empty tensor"));
    }
    Ok((x.min(), x.max()))
}

/// Greedy shrinking of `(min, max)` in fixed steps of `(max − min)/2^b`. Each
/// round tries raising `l` and lowering `u` by one step and takes the better
/// one if it lowers the score; the first non-improving round ends the search
/// with the last improving bounds. Constant tensors give `(min, min + 1e-6)`.
pub fn adc(x: &Tensor, bits: u32, measure: MeasureType) -> Result<AdcResult> {
    let (l0, u0) = min_max(x)?;
    if u0 <= l0 {
        let g = Grid::checked(l0, l0 + DEGENERATE_WIDTH, bits)?;
        let gamma = fcmp_grid(&g, measure, x);
        return Ok(AdcResult {
            l: l0,
            u: l0 + DEGENERATE_WIDTH,
            gamma,
            trace: vec![gamma],
        });
    }
    let delta = ((u0 as f64 - l0 as f64) / 2f64.powi(bits as i32)) as f32;
    let (mut l, mut u) = (l0, u0);
    let mut best = fcmp_grid(&Grid::checked(l, u, bits)?, measure, x);
    let mut trace = vec![best];
    loop {
        let mut cand: Option<(f64, f32, f32)> = None;
        // on equal scores the upper move wins (it is tried first)
        for (cl, cu) in [(l, u - delta), (l + delta, u)] {
            if cu <= cl || cl == l && cu == u {
                continue;
            }
            let s = fcmp_grid(&Grid::checked(cl, cu, bits)?, measure, x);
            if cand.map_or(true, |c| s < c.0) {
                cand = Some((s, cl, cu));
            }
        }
        match cand {
            Some((s, cl, cu)) if s < best => {
                best = s;
                l = cl;
                u = cu;
                trace.push(s);
            }
            _ => break,
        }
    }
    Ok(AdcResult { l, u, gamma: best, trace })
}

/// Smallest and largest value.
pub fn minmax_calibrate(x: &Tensor) -> Result<(f32, f32)> {
    min_max(x)
}

// Linear interpolation between order statistics at position q·(n−1).
fn quantile(sorted: &[f32], q: f64) -> f32 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    (sorted[lo] as f64 * (1.0 - t) + sorted[hi] as f64 * t) as f32
}

/// `(quantile(1 − p), quantile(p))` with linear interpolation.
pub fn percentile_calibrate(x: &Tensor, p: f64) -> Result<(f32, f32)> {
    if !(0.5..=1.0).contains(&p) {
        return Err(invalid("percentile_calibrate", format!("p must be in [0.5, 1], got {p}")));
    }
    min_max(x)?;
    let mut v = x.data().to_vec();
    v.sort_by(f32::total_cmp);
    Ok((quantile(&v, 1.0 - p), quantile(&v, p)))
}

/// Widens a degenerate range so it forms a valid grid.
pub fn valid_bounds(l: f32, u: f32) -> (f32, f32) {
    if u > l {
        (l, u)
    } else {
        (l, l + DEGENERATE_WIDTH)
    }
}

/// ADC bounds as quantizer parameters.
pub fn adc_params(x: &Tensor, bits: u32, measure: MeasureType) -> Result<QuantParams> {
    let r = adc(x, bits, measure)?;
    QuantParams::new(r.l, r.u, bits)
}
