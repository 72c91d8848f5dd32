//! Implementation of each subcommand.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::info;

use craft_core::data::{
    degrade, load_checkpoint, load_dir, sample_calibration, save_checkpoint, Checkpoint, GeneratorKind, ImageBuffer,
    SyntheticDatasetSpec,
};
use craft_core::freq::{drop_ratio_curve, log_amplitude_spectrum, radial_mean, residual_spectrum, Degradation, DropMode, PsnrOpts};
use craft_core::metrics::{psnr, ssim, MetricReport};
use craft_core::model::{CraftConfig, CraftModel};
use craft_core::quant::{ptq_pipeline, MeasureType, Method, PtqConfig, QuantTable, SiteKind};
use craft_core::tensor::{bicubic_resize, Tensor};
use craft_core::train::{train as train_model, TrainConfig};

use crate::output::{fmt6, sibling, Csv, Manifest};
use crate::{DataArgs, EvalArgs, FreqDropArgs, QuantizeArgs, SpectrumArgs, SrArgs, TrainArgs};

pub struct Ctx {
    pub command: String,
    pub flags: Vec<(String, String)>,
}

impl Ctx {
    fn manifest(&self, seed: Option<u64>) -> Manifest {
        Manifest {
            command: self.command.clone(),
            flags: self.flags.clone(),
            seed,
        }
    }
}

fn mix(spec: &str) -> Result<Vec<GeneratorKind>> {
    match spec {
        "all" => Ok(GeneratorKind::ALL.to_vec()),
        "high-frequency" => Ok(SyntheticDatasetSpec::high_frequency(0, 0, 0).mix),
        "texture" => Ok(SyntheticDatasetSpec::texture(0, 0, 0).mix),
        s => s
            .split(',')
            .map(|k| k.trim().parse::<GeneratorKind>().map_err(|e| anyhow!("{e}")))
            .collect(),
    }
}

/// HR images from a directory or the seeded generator (`purpose` picks the stream).
fn load_images(source: &str, synth: &DataArgs, seed: u64) -> Result<Vec<Tensor>> {
    let imgs = if source == "synthetic" {
        SyntheticDatasetSpec {
            seed,
            count: synth.count,
            size: synth.size,
            mix: mix(&synth.mix)?,
        }
        .generate()?
    } else {
        load_dir(Path::new(source)).with_context(|| format!("loading images from {source}"))?
    };
    if imgs.is_empty() {
        bail!("dataset {source} holds no images");
    }
    Ok(imgs)
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn default_heads(channels: usize) -> usize {
    [6, 4, 2].into_iter().find(|h| channels % h == 0).unwrap_or(2)
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    if !matches!(a.scale, 2..=4) {
        bail!("invalid scale {} (expected 2, 3 or 4)", a.scale);
    }
    let mut cfg = CraftConfig::with_scale(a.scale);
    cfg.channels = a.channels;
    cfg.heads = a.heads.unwrap_or_else(|| default_heads(a.channels));
    cfg.n_rcrfg = a.rcrfg;
    cfg.n_crfb = a.crfb;
    cfg.validate()?;
    let data = load_images(&a.data, &a.synth, a.seed)?;
    let mut model = CraftModel::new(cfg, a.seed)?;
    info!("training {} parameters on {} images", model.param_count(), data.len());
    let tc = TrainConfig {
        iters: a.iters,
        batch: a.batch,
        lr: a.lr,
        patch: a.patch,
        seed: a.seed,
        log_every: a.log_every,
        cosine: !a.constant_lr,
    };
    let report = train_model(&mut model, &data, &tc, |_, _| {})?;
    save_checkpoint(&Checkpoint::new(model, None), &a.out)?;
    let mut csv = Csv::new(&["iter", "loss"]);
    for (i, l) in report.log {
        csv.row(&[i.to_string(), fmt6(l)]);
    }
    csv.write(&sibling(&a.out, ".loss.csv"))?;
    ctx.manifest(Some(a.seed)).write_beside(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

fn quant_table(ck: &Checkpoint, quantized: bool) -> Result<Option<&QuantTable>> {
    if !quantized {
        return Ok(None);
    }
    ck.quant
        .as_ref()
        .map(Some)
        .ok_or_else(|| anyhow!("--quantized given but the checkpoint has no quantization table"))
}

fn run_model(model: &CraftModel, table: Option<&QuantTable>, lr: &Tensor) -> craft_core::Result<Tensor> {
    match table {
        Some(t) => model.forward_quant(lr, t),
        None => model.forward(lr),
    }
}

pub fn sr(ctx: &Ctx, a: SrArgs) -> Result<()> {
    let start = Instant::now();
    let ck = load_model(&a.model)?;
    if let Some(s) = a.scale {
        if s != ck.model.config.scale {
            bail!("--scale {s} does not match the checkpoint's scale {}", ck.model.config.scale);
        }
    }
    let table = quant_table(&ck, a.quantized)?;
    let img = ImageBuffer::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let t = Instant::now();
    let out = run_model(&ck.model, table, &img.to_tensor())?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let out_img = ImageBuffer::from_tensor(&out)?;
    out_img.save(&a.output)?;
    println!(
        "{}x{} -> {}x{} in {ms:.1} ms",
        img.width, img.height, out_img.width, out_img.height
    );
    ctx.manifest(None).write_beside(&a.output, start.elapsed().as_secs_f64())?;
    Ok(())
}

fn parse_gammas(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| anyhow!("bad number {p:?} in --gammas"));
    let out: Vec<f64> = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step <= 0.0 {
                bail!("--gammas step must be positive");
            }
            let n = ((b - a) / step + 1e-9).floor();
            if n < 0.0 {
                Vec::new()
            } else {
                (0..=n as usize).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9).collect()
            }
        }
        _ => s.split(',').filter(|p| !p.trim().is_empty()).map(num).collect::<Result<_>>()?,
    };
    if out.is_empty() {
        bail!("empty gamma list");
    }
    Ok(out)
}

fn parse_thetas(s: &str) -> Result<Vec<usize>> {
    let out: Vec<usize> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>().map_err(|_| anyhow!("bad window {p:?} in --thetas")))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        bail!("empty theta list");
    }
    if let Some(t) = out.iter().find(|t| *t % 2 == 0) {
        bail!("box-filter window {t} must be odd");
    }
    Ok(out)
}

/// A checkpoint, or bicubic upscaling at a given scale.
enum Upscaler {
    Model(Box<CraftModel>),
    Bicubic(usize),
}

impl Upscaler {
    fn load(spec: &str, scale: Option<usize>) -> Result<Self> {
        if spec == "bicubic" {
            let s = scale.ok_or_else(|| anyhow!("--scale is required with --model bicubic"))?;
            if s == 0 {
                bail!("invalid scale 0");
            }
            return Ok(Self::Bicubic(s));
        }
        let ck = load_model(Path::new(spec))?;
        if let Some(s) = scale {
            if s != ck.model.config.scale {
                bail!("--scale {s} does not match the checkpoint's scale {}", ck.model.config.scale);
            }
        }
        Ok(Self::Model(Box::new(ck.model)))
    }

    fn scale(&self) -> usize {
        match self {
            Self::Model(m) => m.config.scale,
            Self::Bicubic(s) => *s,
        }
    }

    fn run(&self, table: Option<&QuantTable>, lr: &Tensor) -> craft_core::Result<Tensor> {
        match self {
            Self::Model(m) => run_model(m, table, lr),
            Self::Bicubic(s) => {
                let (_, _, h, w) = lr.dims4("bicubic")?;
                bicubic_resize(lr, h * s, w * s)
            }
        }
    }
}

pub fn freq_drop(ctx: &Ctx, a: FreqDropArgs) -> Result<()> {
    let start = Instant::now();
    let mode: DropMode = a.mode.parse()?;
    let degradations: Vec<Degradation> = match (&a.gammas, &a.thetas) {
        (Some(g), None) => parse_gammas(g)?.into_iter().map(Degradation::Drop).collect(),
        (None, Some(t)) => parse_thetas(t)?.into_iter().map(Degradation::MeanFilter).collect(),
        (None, None) => bail!("give --gammas or --thetas"),
        _ => bail!("--gammas and --thetas are exclusive"),
    };
    let up = Upscaler::load(&a.model, (a.model == "bicubic").then_some(a.scale))?;
    let data = load_images(&a.data, &a.synth, a.seed)?;
    let curve = drop_ratio_curve(|x| up.run(None, x), &data, &degradations, mode, up.scale(), PsnrOpts::default())?;
    let mut csv = Csv::new(&["x", "ratio"]);
    for (x, r) in &curve.points {
        csv.row(&[fmt6(*x), fmt6(*r)]);
    }
    csv.write(&a.out)?;
    ctx.manifest(Some(a.seed)).write_beside(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn quantize(ctx: &Ctx, a: QuantizeArgs) -> Result<()> {
    let start = Instant::now();
    if ![4, 6, 8].contains(&a.bits) {
        bail!("invalid bit-width {} (expected 4, 6 or 8)", a.bits);
    }
    let mut method: Method = a.method.parse()?;
    if let Method::Percentile(_) = method {
        method = Method::Percentile(a.percentile);
    }
    if a.no_fgo {
        if !method.refines() {
            bail!("--no-fgo only applies to --method fgo or feature");
        }
        method = Method::Feature;
    }
    let ck = load_model(&a.model)?;
    let model = ck.model;
    let r = model.config.scale;
    let hr = if a.calib == "synthetic" {
        let mut synth = a.synth.clone();
        synth.size = synth.size.max(a.patch * r);
        load_images("synthetic", &synth, a.seed)?
    } else {
        load_images(&a.calib, &a.synth, a.seed)?
    };
    let lr: Vec<Tensor> = hr.iter().map(|x| degrade(x, r)).collect::<craft_core::Result<_>>()?;
    let calib = sample_calibration(&lr, a.calib_count, a.patch, a.seed)?;
    let cfg = PtqConfig {
        bits: a.bits,
        method,
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        beta: a.beta,
        per_channel_weights: a.per_channel,
    };
    info!("calibrating {} sites with {} on {} patches", method.name(), a.bits, calib.len());
    let outcome = ptq_pipeline(&model, &calib.patches, &cfg)?;

    let mut sites = Csv::new(&["site", "kind", "measure", "l", "u", "bits"]);
    for s in outcome.table.sites() {
        sites.row(&[
            s.name.clone(),
            match s.kind {
                SiteKind::Weight => "weight".into(),
                SiteKind::Activation => "activation".into(),
            },
            match s.measure {
                MeasureType::Fgo => "fgo".into(),
                MeasureType::Feature => "feature".into(),
            },
            fmt6(s.params.l as f64),
            fmt6(s.params.u as f64),
            s.params.bits.to_string(),
        ]);
    }
    sites.write(&sibling(&a.out, ".sites.csv"))?;
    let mut losses = Csv::new(&["stage", "loss"]);
    if let Some(rep) = &outcome.refine {
        losses.row(&["initial".into(), fmt6(rep.initial_loss)]);
        for (i, l) in rep.epoch_losses.iter().enumerate() {
            losses.row(&[format!("epoch{}", i + 1), fmt6(*l)]);
        }
        losses.row(&["final".into(), fmt6(rep.final_loss)]);
    }
    losses.write(&sibling(&a.out, ".loss.csv"))?;
    save_checkpoint(&Checkpoint::new(model, Some(outcome.table)), &a.out)?;
    ctx.manifest(Some(a.seed)).write_beside(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let start = Instant::now();
    let wanted: Vec<&str> = a.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    if let Some(m) = wanted.iter().find(|m| !matches!(**m, "psnr" | "ssim")) {
        bail!("unknown metric {m:?} (psnr, ssim)");
    }
    if wanted.is_empty() {
        bail!("no metrics requested");
    }
    let ck_table;
    let up = Upscaler::load(&a.model, a.scale)?;
    let table = match (&up, a.quantized) {
        (Upscaler::Model(_), true) => {
            ck_table = load_model(Path::new(&a.model))?.quant;
            Some(ck_table.as_ref().ok_or_else(|| anyhow!("--quantized given but the checkpoint has no quantization table"))?)
        }
        (Upscaler::Bicubic(_), true) => bail!("--quantized needs a checkpoint"),
        _ => None,
    };
    let r = up.scale();
    let data = load_images(&a.data, &a.synth, a.seed)?;
    let crop = if a.luma { r } else { 0 };
    let mut header = vec!["image"];
    header.extend(wanted.iter().copied());
    let mut csv = Csv::new(&header);
    let mut items = Vec::with_capacity(data.len());
    for (i, hr) in data.iter().enumerate() {
        let hr = craft_core::data::crop_to_multiple(hr, r)?;
        let lr = degrade(&hr, r)?;
        let sr = up.run(table, &lr)?;
        let p = psnr(&sr, &hr, 1.0, crop, a.luma)?;
        let s = if a.luma {
            let y = |t: &Tensor| craft_core::metrics::rgb_to_ycbcr_y(t, 1.0);
            let (cs, ch) = (craft_core::data::crop(&y(&sr)?, crop, crop, sr.shape()[2] - 2 * crop, sr.shape()[3] - 2 * crop)?, craft_core::data::crop(&y(&hr)?, crop, crop, hr.shape()[2] - 2 * crop, hr.shape()[3] - 2 * crop)?);
            ssim(&cs, &ch, 1.0)?
        } else {
            ssim(&sr, &hr, 1.0)?
        };
        items.push((p, s));
        let mut row = vec![i.to_string()];
        for m in &wanted {
            row.push(if *m == "psnr" { fmt6(p) } else { fmt6(s) });
        }
        csv.row(&row);
    }
    let mean = MetricReport::mean(&items);
    let mut row = vec!["mean".to_string()];
    for m in &wanted {
        row.push(if *m == "psnr" { fmt6(mean.psnr) } else { fmt6(mean.ssim) });
    }
    csv.row(&row);
    csv.write(&a.out)?;
    let protocol = if a.luma {
        format!("luma (BT.601 studio swing), crop {crop}, peak 1")
    } else {
        "RGB, crop 0, peak 1".to_string()
    };
    eprintln!("protocol: {protocol}; {} images; mean psnr {} ssim {}", mean.n_images, fmt6(mean.psnr), fmt6(mean.ssim));
    let mut m = ctx.manifest(Some(a.seed));
    m.flags.push(("protocol".into(), protocol));
    m.write_beside(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn spectrum(ctx: &Ctx, a: SpectrumArgs) -> Result<()> {
    let start = Instant::now();
    let img = ImageBuffer::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let t = img.to_tensor();
    let s = log_amplitude_spectrum(&t)?;
    let mut csv;
    if let Some(other) = &a.compare {
        let b = ImageBuffer::load(other).with_context(|| format!("reading {}", other.display()))?;
        if (b.width, b.height) != (img.width, img.height) {
            bail!(
                "size mismatch: {}x{} vs {}x{}",
                img.width,
                img.height,
                b.width,
                b.height
            );
        }
        let res = residual_spectrum(&t, &b.to_tensor())?;
        let map: Vec<f64> = res.data().iter().map(|&v| v as f64).collect();
        let rr = radial_mean(&map, img.height, img.width);
        csv = Csv::new(&["radius", "log_amplitude", "residual"]);
        for ((r, v), res) in s.radii.iter().zip(&s.values).zip(&rr.values) {
            csv.row(&[r.to_string(), fmt6(*v), fmt6(*res)]);
        }
    } else {
        csv = Csv::new(&["radius", "log_amplitude"]);
        for (r, v) in s.radii.iter().zip(&s.values) {
            csv.row(&[r.to_string(), fmt6(*v)]);
        }
    }
    csv.write(&a.out)?;
    ctx.manifest(None).write_beside(&a.out, start.elapsed().as_secs_f64())?;
    Ok(())
}
