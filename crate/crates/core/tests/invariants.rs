use craft_core::data::ImageBuffer;
use craft_core::freq::drop_high_freq;
use craft_core::metrics::{psnr, ssim};
use craft_core::par;
use craft_core::quant::{fake_quantize, QuantParams};
use craft_core::tensor::{conv2d, pixel_shuffle, pixel_unshuffle};
use craft_core::Tensor;
use proptest::prelude::*;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(0.0f32..1.0, n).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

fn energy(t: &Tensor) -> f64 {
    t.data().iter().map(|&v| (v as f64).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fake_quant_is_idempotent_and_coarse(
        xs in prop::collection::vec(-4.0f32..4.0, 1..200),
        l in -3.0f32..-0.01,
        u in 0.01f32..3.0,
        bits in prop::sample::select(vec![2u32, 4, 6, 8]),
    ) {
        let x = Tensor::new(&[xs.len()], xs).unwrap();
        let qp = QuantParams::new(l, u, bits).unwrap();
        let q = fake_quantize(&x, &qp).unwrap();
        let qq = fake_quantize(&q, &qp).unwrap();
        prop_assert_eq!(q.data(), qq.data());
        let mut distinct: Vec<u32> = q.data().iter().map(|v| v.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert!(distinct.len() <= 1 << bits);
        // inside the range the error is at most half a step
        let step = (u - l) / ((1u32 << bits) - 1) as f32;
        for (a, b) in x.data().iter().zip(q.data()) {
            if *a >= l && *a <= u {
                prop_assert!((a - b).abs() <= step * 0.5 + 1e-5, "x={} q={} step={}", a, b, step);
            }
        }
    }

    #[test]
    fn frequency_drop_is_a_projection(x in tensor(&[1, 3, 12, 10]), gamma in 0.0f64..1.0) {
        let y = drop_high_freq(&x, gamma).unwrap();
        let z = drop_high_freq(&y, gamma).unwrap();
        prop_assert!(y.max_abs_diff(&z) < 1e-4);
        prop_assert!(energy(&y) <= energy(&x) * (1.0 + 1e-6) + 1e-9);
    }

    #[test]
    fn metrics_are_symmetric(a in tensor(&[1, 3, 16, 16]), b in tensor(&[1, 3, 16, 16])) {
        let p1 = psnr(&a, &b, 1.0, 0, false).unwrap();
        let p2 = psnr(&b, &a, 1.0, 0, false).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-9);
        let s1 = ssim(&a, &b, 1.0).unwrap();
        let s2 = ssim(&b, &a, 1.0).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-9);
        prop_assert!(s1 <= 1.0 + 1e-9);
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!(psnr(&a, &a, 1.0, 0, false).unwrap().is_infinite());
    }

    #[test]
    fn psnr_ignores_a_common_shift(a in tensor(&[1, 1, 8, 8]), b in tensor(&[1, 1, 8, 8]), c in -0.5f32..0.5) {
        prop_assume!(a.max_abs_diff(&b) > 1e-3);
        let p = psnr(&a, &b, 1.0, 0, false).unwrap();
        let q = psnr(&a.map(|v| v + c), &b.map(|v| v + c), 1.0, 0, false).unwrap();
        prop_assert!((p - q).abs() < 1e-3);
    }

    #[test]
    fn ppm_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let data: Vec<u8> = (0..w * h * 3)
            .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8)
            .collect();
        let img = ImageBuffer::new(w, h, data).unwrap();
        let back = ImageBuffer::decode_ppm(&img.encode_ppm()).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(ImageBuffer::from_tensor(&img.to_tensor()).unwrap(), img);
    }

    #[test]
    fn pixel_shuffle_inverts(x in tensor(&[1, 8, 3, 5])) {
        let up = pixel_shuffle(&x, 2).unwrap();
        prop_assert_eq!(up.shape(), &[1, 2, 6, 10]);
        prop_assert_eq!(pixel_unshuffle(&up, 2).unwrap(), x);
    }
}

#[test]
fn sequential_and_parallel_kernels_agree() {
    let x = Tensor::from_fn(&[2, 8, 40, 40], |i| ((i * 37) % 101) as f32 / 101.0 - 0.5);
    let w = Tensor::from_fn(&[8, 8, 3, 3], |i| ((i * 13) % 17) as f32 / 17.0 - 0.5);
    let a = conv2d(&x, &w, None, 1, 1, 1).unwrap();
    let b = par::sequential(|| conv2d(&x, &w, None, 1, 1, 1).unwrap());
    assert_eq!(a, b);
}
