//! 2-D discrete Fourier transforms over single planes.
//!
//! Forward transforms are unnormalized; the inverse scales by `1/(H·W)`.

use std::cell::RefCell;

use rustfft::num_complex::Complex32;
use rustfft::{FftDirection, FftPlanner};

use super::Tensor;
use crate::error::{invalid, Result};

/// Complex spectrum of one H×W plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub h: usize,
    pub w: usize,
    pub re: Vec<f32>,
    pub im: Vec<f32>,
}

impl ComplexGrid {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            re: vec![0.0; h * w],
            im: vec![0.0; h * w],
        }
    }

    pub fn magnitude(&self) -> Vec<f32> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| (r * r + i * i).sqrt())
            .collect()
    }

    /// Magnitudes rearranged so the DC bin sits at `(h/2, w/2)`.
    pub fn shifted_magnitude(&self) -> Vec<f32> {
        let mag = self.magnitude();
        let mut out = vec![0.0; mag.len()];
        for ky in 0..self.h {
            for kx in 0..self.w {
                let (sy, sx) = (fftshift_index(ky, self.h), fftshift_index(kx, self.w));
                out[sy * self.w + sx] = mag[ky * self.w + kx];
            }
        }
        out
    }
}

/// Position of frequency bin `k` after a centering shift of an `n`-length axis.
pub fn fftshift_index(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
}

fn transform_2d(buf: &mut [Complex32], h: usize, w: usize, dir: FftDirection) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let row = p.plan_fft(w, dir);
        let col = p.plan_fft(h, dir);
        row.process(buf);
        let mut t = vec![Complex32::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = buf[y * w + x];
            }
        }
        col.process(&mut t);
        for y in 0..h {
            for x in 0..w {
                buf[y * w + x] = t[x * h + y];
            }
        }
    });
}

/// Forward transform of a real row-major H×W plane.
pub fn fft2_plane(data: &[f32], h: usize, w: usize) -> ComplexGrid {
    assert_eq!(data.len(), h * w, "fft2_plane: plane size mismatch");
    let mut buf: Vec<Complex32> = data.iter().map(|&v| Complex32::new(v, 0.0)).collect();
    transform_2d(&mut buf, h, w, FftDirection::Forward);
    ComplexGrid {
        h,
        w,
        re: buf.iter().map(|c| c.re).collect(),
        im: buf.iter().map(|c| c.im).collect(),
    }
}

/// Inverse transform; returns the real part.
pub fn ifft2_plane(g: &ComplexGrid) -> Vec<f32> {
    let mut buf: Vec<Complex32> = g
        .re
        .iter()
        .zip(&g.im)
        .map(|(&r, &i)| Complex32::new(r, i))
        .collect();
    transform_2d(&mut buf, g.h, g.w, FftDirection::Inverse);
    let norm = 1.0 / (g.h * g.w) as f32;
    buf.iter().map(|c| c.re * norm).collect()
}

/// Magnitude spectrum `|F(plane)|` in natural (unshifted) bin order.
pub fn magnitude_plane(data: &[f32], h: usize, w: usize) -> Vec<f32> {
    fft2_plane(data, h, w).magnitude()
}

fn plane_dims(x: &Tensor) -> Result<(usize, usize)> {
    let s = x.shape();
    let r = s.len();
    if r < 2 || s[..r - 2].iter().any(|&d| d != 1) {
        return Err(invalid("fft2", format!("expected a single plane, got {s:?}")));
    }
    Ok((s[r - 2], s[r - 1]))
}

/// Forward 2-D FFT of a single-channel tensor (leading extents must be 1).
pub fn fft2(x: &Tensor) -> Result<ComplexGrid> {
    let (h, w) = plane_dims(x)?;
    Ok(fft2_plane(x.data(), h, w))
}

/// Inverse 2-D FFT returning the real part as a 1×1×H×W tensor.
pub fn ifft2(g: &ComplexGrid) -> Tensor {
    Tensor::new(&[1, 1, g.h, g.w], ifft2_plane(g)).expect("grid extents are ≥ 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f32], h: usize, w: usize) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((ky * y) as f64 / h as f64 + (kx * xx) as f64 / w as f64);
                        re += x[y * w + xx] as f64 * ang.cos();
                        im += x[y * w + xx] as f64 * ang.sin();
                    }
                }
                out[ky * w + kx] = (re, im);
            }
        }
        out
    }

    #[test]
    fn constant_has_only_dc() {
        let x = Tensor::full(&[1, 1, 4, 6], 2.0);
        let g = fft2(&x).unwrap();
        assert!((g.re[0] - 48.0).abs() < 1e-4);
        for i in 1..24 {
            assert!(g.re[i].abs() < 1e-4 && g.im[i].abs() < 1e-4);
        }
    }

    #[test]
    fn delta_is_flat() {
        let mut x = Tensor::zeros(&[1, 1, 5, 4]);
        x.data_mut()[0] = 1.0;
        let g = fft2(&x).unwrap();
        assert!(g.magnitude().iter().all(|m| (m - 1.0).abs() < 1e-6));
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f32> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = fft2_plane(&x, 6, 5);
        for (i, (re, im)) in naive_dft(&x, 6, 5).into_iter().enumerate() {
            assert!((g.re[i] as f64 - re).abs() < 1e-4);
            assert!((g.im[i] as f64 - im).abs() < 1e-4);
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(&[1, 1, 7, 9], |_| rng.gen_range(-1.0..1.0));
        let back = ifft2(&fft2(&x).unwrap());
        assert!(back.max_abs_diff(&x) < 1e-5);
        assert!(fft2(&Tensor::zeros(&[1, 2, 4, 4])).is_err());
    }

    #[test]
    fn shift_puts_dc_at_center() {
        assert_eq!(fftshift_index(0, 8), 4);
        assert_eq!(fftshift_index(0, 5), 2);
        assert_eq!(fftshift_index(4, 8), 0);
    }
}
