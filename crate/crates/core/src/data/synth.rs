//! Seeded synthetic images standing in for a natural-image corpus.

use std::f32::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::substream;
use crate::error::{invalid, Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    Checkerboard,
    Grating,
    Blobs,
    Voronoi,
    FilteredNoise,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 5] = [
        Self::Checkerboard,
        Self::Grating,
        Self::Blobs,
        Self::Voronoi,
        Self::FilteredNoise,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Checkerboard => "checkerboard",
            Self::Grating => "grating",
            Self::Blobs => "blobs",
            Self::Voronoi => "voronoi",
            Self::FilteredNoise => "noise",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid("GeneratorKind", format!("unknown generator {s:?}")))
    }
}

/// Image `i` uses `mix[i % mix.len()]` and its own random substream.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub mix: Vec<GeneratorKind>,
}

impl SyntheticDatasetSpec {
    pub fn new(seed: u64, count: usize, size: usize) -> Self {
        Self {
            seed,
            count,
            size,
            mix: GeneratorKind::ALL.to_vec(),
        }
    }

    /// Edges and textures only: the smooth blob class is left out because
    /// bicubic upscaling is already near-lossless on it.
    pub fn texture(seed: u64, count: usize, size: usize) -> Self {
        Self {
            seed,
            count,
            size,
            mix: vec![
                GeneratorKind::Checkerboard,
                GeneratorKind::Voronoi,
                GeneratorKind::Grating,
                GeneratorKind::FilteredNoise,
            ],
        }
    }

    /// Mostly gratings and checkerboards: content dominated by high frequencies.
    pub fn high_frequency(seed: u64, count: usize, size: usize) -> Self {
        Self {
            seed,
            count,
            size,
            mix: vec![GeneratorKind::Grating, GeneratorKind::Grating, GeneratorKind::Checkerboard],
        }
    }

    pub fn generate(&self) -> Result<Vec<Tensor>> {
        if self.mix.is_empty() {
            return Err(Error::Dataset("empty generator mix".into()));
        }
        if self.size < 4 {
            return Err(Error::Dataset(format!("synthetic size {} is below 4", self.size)));
        }
        (0..self.count)
            .map(|i| {
                let mut rng = substream(self.seed, &format!("synthetic/{i}"));
                generate_one(self.mix[i % self.mix.len()], self.size, &mut rng)
            })
            .collect()
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn from_pixels(size: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Tensor> {
    let hw = size * size;
    let mut data = vec![0.0f32; 3 * hw];
    for y in 0..size {
        for x in 0..size {
            let c = f(y, x);
            for k in 0..3 {
                data[k * hw + y * size + x] = c[k].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[1, 3, size, size], data)
}

/// One 1×3×size×size image in [0, 1].
pub fn generate_one(kind: GeneratorKind, size: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    match kind {
        GeneratorKind::Checkerboard => {
            let cell = rng.gen_range(2..=8usize);
            let (ox, oy) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
            let (a, b) = (color(rng), color(rng));
            from_pixels(size, |y, x| if ((y + oy) / cell + (x + ox) / cell) % 2 == 0 { a } else { b })
        }
        GeneratorKind::Grating => {
            // kept below the Nyquist rate of a ×2 downscale so the pattern survives in LR
            let freq = rng.gen_range(0.12f32..0.22);
            let theta = rng.gen_range(0.0..PI);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let mean = color(rng).map(|v| 0.3 + 0.4 * v);
            let amp = color(rng).map(|v| 0.1 + 0.2 * v);
            let (c, s) = (theta.cos(), theta.sin());
            from_pixels(size, |y, x| {
                let t = (2.0 * PI * freq * (x as f32 * c + y as f32 * s) + phase).cos();
                [0, 1, 2].map(|k| mean[k] + amp[k] * t)
            })
        }
        GeneratorKind::Blobs => {
            let bg = color(rng);
            let n = rng.gen_range(8..=24);
            let blobs: Vec<_> = (0..n)
                .map(|_| {
                    let cy = rng.gen_range(0.0..size as f32);
                    let cx = rng.gen_range(0.0..size as f32);
                    let sigma = rng.gen_range(1.0f32..3.5);
                    let col = color(rng).map(|v| v - 0.5);
                    (cy, cx, sigma, col)
                })
                .collect();
            from_pixels(size, |y, x| {
                let mut v = bg;
                for &(cy, cx, s, col) in &blobs {
                    let g = (-((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)) / (2.0 * s * s)).exp();
                    for k in 0..3 {
                        v[k] += g * col[k];
                    }
                }
                v
            })
        }
        GeneratorKind::Voronoi => {
            let n = rng.gen_range(4..=12);
            let seeds: Vec<_> = (0..n)
                .map(|_| (rng.gen_range(0.0..size as f32), rng.gen_range(0.0..size as f32), color(rng)))
                .collect();
            from_pixels(size, |y, x| {
                let d = |s: &(f32, f32, [f32; 3])| (y as f32 - s.0).powi(2) + (x as f32 - s.1).powi(2);
                seeds
                    .iter()
                    .min_by(|a, b| d(a).total_cmp(&d(b)))
                    .map(|s| s.2)
                    .unwrap_or([0.5; 3])
            })
        }
        GeneratorKind::FilteredNoise => {
            let window = [3usize, 5][rng.gen_range(0..2)];
            let mean = color(rng).map(|v| 0.3 + 0.4 * v);
            let raw = Tensor::from_fn(&[1, 3, size, size], |_| rng.gen_range(-1.0f32..1.0));
            let smooth = tensor::mean_filter(&raw, window)?;
            let hw = size * size;
            let gain = window as f32 * 0.4;
            let d = smooth.data();
            from_pixels(size, |y, x| [0, 1, 2].map(|k| mean[k] + gain * d[k * hw + y * size + x]))
        }
    }
}
