//! Images, datasets, degradation, calibration sampling and checkpoints.

mod checkpoint;
mod image;
mod synth;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use image::{load_dir, ImageBuffer};
pub use synth::{generate_one, GeneratorKind, SyntheticDatasetSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::tensor::{bicubic_resize, Tensor};

/// Independent random stream for `purpose` derived from one seed.
pub fn substream(seed: u64, purpose: &str) -> ChaCha8Rng {
    // FNV-1a of the purpose selects the ChaCha stream
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

/// Crops the bottom/right edges so both extents are multiples of `r`.
pub fn crop_to_multiple(x: &Tensor, r: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4("crop_to_multiple")?;
    if r == 0 {
        return Err(invalid("crop_to_multiple", "scale must be ≥ 1"));
    }
    let (nh, nw) = (h / r * r, w / r * r);
    if nh == 0 || nw == 0 {
        return Err(invalid("crop_to_multiple", format!("{h}×{w} is smaller than scale {r}")));
    }
    crop(x, 0, 0, nh, nw)
}

/// Spatial window `[y, y+h) × [x, x+w)` of every plane.
pub fn crop(t: &Tensor, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, th, tw) = t.dims4("crop")?;
    if y + h > th || x + w > tw {
        return Err(invalid("crop", format!("window {h}×{w} at ({y},{x}) exceeds {th}×{tw}")));
    }
    if (y, x, h, w) == (0, 0, th, tw) {
        return Ok(t.clone());
    }
    let d = t.data();
    let mut out = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        for yy in y..y + h {
            let row = p * th * tw + yy * tw;
            out.extend_from_slice(&d[row + x..row + x + w]);
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Bicubic downscale by `r` after cropping to a multiple of `r`.
pub fn degrade(hr: &Tensor, r: usize) -> Result<Tensor> {
    let hr = crop_to_multiple(hr, r)?;
    let (_, _, h, w) = hr.dims4("degrade")?;
    bicubic_resize(&hr, h / r, w / r)
}

/// Random aligned HR/LR training pair: an `lr_patch·r` HR crop and its
/// bicubic downscale.
pub fn random_pair(hr: &Tensor, r: usize, lr_patch: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = hr.dims4("random_pair")?;
    let p = lr_patch * r;
    if h < p || w < p {
        return Err(Error::Dataset(format!("image {h}×{w} is smaller than the {p}×{p} training patch")));
    }
    let y = rng.gen_range(0..=h - p);
    let x = rng.gen_range(0..=w - p);
    let hr_p = crop(hr, y, x, p, p)?;
    let lr_p = degrade(&hr_p, r)?;
    Ok((hr_p, lr_p))
}

/// Source of one calibration patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchId {
    pub image: usize,
    pub y: usize,
    pub x: usize,
}

/// Ordered low-resolution patches; no targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub patches: Vec<Tensor>,
    pub ids: Vec<PatchId>,
}

impl CalibrationSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Draws `n` patches of `patch×patch` from low-resolution images, visiting the
/// images round-robin (patch `k` comes from image `k mod len`) at seeded
/// positions.
pub fn sample_calibration(lr_images: &[Tensor], n: usize, patch: usize, seed: u64) -> Result<CalibrationSet> {
    if n == 0 {
        return Err(Error::Dataset("calibration set size must be ≥ 1".into()));
    }
    if lr_images.is_empty() {
        return Err(Error::Dataset(format!("need images for {n} calibration patches, got none")));
    }
    let mut short = Vec::new();
    for (i, img) in lr_images.iter().enumerate() {
        let (_, _, h, w) = img.dims4("sample_calibration")?;
        if h < patch || w < patch {
            short.push(format!("#{i} is {h}×{w}"));
        }
    }
    if !short.is_empty() {
        return Err(Error::Dataset(format!(
            "{} of {} images are smaller than the {patch}×{patch} patch: {}",
            short.len(),
            lr_images.len(),
            short.join(", ")
        )));
    }
    let mut rng = substream(seed, "calibration");
    let mut patches = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for k in 0..n {
        let image = k % lr_images.len();
        let (_, _, h, w) = lr_images[image].dims4("sample_calibration")?;
        let y = rng.gen_range(0..=h - patch);
        let x = rng.gen_range(0..=w - patch);
        patches.push(crop(&lr_images[image], y, x, patch, patch)?);
        ids.push(PatchId { image, y, x });
    }
    Ok(CalibrationSet { patches, ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_and_repeat() {
        let a: u64 = substream(1, "a").gen();
        let a2: u64 = substream(1, "a").gen();
        let b: u64 = substream(1, "b").gen();
        let c: u64 = substream(2, "a").gen();
        assert_eq!(a, a2);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degrade_cases() {
        let c = Tensor::full(&[1, 3, 16, 16], 0.4);
        let lr = degrade(&c, 4).unwrap();
        assert_eq!(lr.shape(), &[1, 3, 4, 4]);
        assert!(lr.data().iter().all(|v| (v - 0.4).abs() < 1e-6));
        let x = Tensor::from_fn(&[1, 1, 9, 10], |i| i as f32 * 0.01);
        assert_eq!(degrade(&x, 1).unwrap(), x);
        let ramp = Tensor::from_fn(&[1, 1, 16, 16], |i| (i % 16) as f32 / 15.0);
        assert_eq!(degrade(&ramp, 2).unwrap(), bicubic_resize(&ramp, 8, 8).unwrap());
        let odd = Tensor::zeros(&[1, 3, 17, 18]);
        assert_eq!(degrade(&odd, 4).unwrap().shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn calibration_schedule() {
        let imgs: Vec<Tensor> = (0..100).map(|i| Tensor::full(&[1, 3, 30, 30], i as f32)).collect();
        let cs = sample_calibration(&imgs, 100, 24, 5).unwrap();
        let mut seen: Vec<usize> = cs.ids.iter().map(|p| p.image).collect();
        seen.sort();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        for (p, id) in cs.patches.iter().zip(&cs.ids) {
            assert_eq!(p.shape(), &[1, 3, 24, 24]);
            assert_eq!(p.data()[0], id.image as f32);
        }
        assert_eq!(sample_calibration(&imgs, 100, 24, 5).unwrap().ids, cs.ids);
        assert!(sample_calibration(&imgs, 0, 24, 5).is_err());
        assert!(sample_calibration(&[], 3, 24, 5).is_err());
        let err = sample_calibration(&imgs[..2], 3, 31, 5).unwrap_err().to_string();
        assert!(err.contains("2 of 2"), "{err}");
    }
}
