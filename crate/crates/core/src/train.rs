//! L1 training of the network with Adam on random HR/LR crops.

use log::info;

use crate::autograd::{Adam, Optimizer};
use crate::data::{degrade, random_pair, substream};
use crate::error::{invalid, Error, Result};
use crate::metrics::psnr;
use crate::model::{craft_forward, CraftModel, TapeBackend};
use crate::tensor::{bicubic_resize, concat, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f32,
    /// Side of the LR training crop.
    pub patch: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Cosine decay of the step size from `lr` to zero over `iters`.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            batch: 4,
            lr: 2e-3,
            patch: 16,
            seed: 0,
            log_every: 100,
            cosine: true,
        }
    }
}

/// Mean L1 loss of one step, recorded every `log_every` iterations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub log: Vec<(usize, f64)>,
}

/// One optimization step on a batch; returns the mean absolute error.
pub fn train_step(model: &mut CraftModel, opt: &mut Adam, lr_batch: &Tensor, hr_batch: &Tensor) -> Result<f64> {
    let grads = {
        let mut b = TapeBackend::new(&model.store, true);
        let x = b.input(lr_batch.clone());
        let y = craft_forward(&mut b, &model.config, &x)?;
        let loss = b.tape.l1_loss(y, hr_batch, 1.0 / hr_batch.numel() as f32)?;
        let value = b.tape.value(loss).item() as f64;
        b.tape.backward(loss)?;
        (value, b.param_grads())
    };
    let (value, grads) = grads;
    model.store.zero_grads();
    for (name, g) in grads {
        if let Some(p) = model.store.get_mut(&name) {
            p.grad = g;
        }
    }
    let mut params = model.store.params_mut();
    opt.step(&mut params);
    Ok(value)
}

/// Trains in place on crops of the HR images. `on_log` sees every logged
/// `(iteration, loss)`.
pub fn train(model: &mut CraftModel, hr_set: &[Tensor], cfg: &TrainConfig, mut on_log: impl FnMut(usize, f64)) -> Result<TrainReport> {
    if hr_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if cfg.batch == 0 || cfg.patch == 0 {
        return Err(invalid("train", "batch and patch must be ≥ 1"));
    }
    let r = model.config.scale;
    let mut rng = substream(cfg.seed, "train/crops");
    let mut opt = Adam::new(cfg.lr);
    let mut report = TrainReport::default();
    for it in 1..=cfg.iters {
        if cfg.cosine {
            let t = (it - 1) as f64 / cfg.iters as f64;
            opt.lr = (cfg.lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32;
        }
        let mut lrs = Vec::with_capacity(cfg.batch);
        let mut hrs = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let k = rand::Rng::gen_range(&mut rng, 0..hr_set.len());
            let (hr, lr) = random_pair(&hr_set[k], r, cfg.patch, &mut rng)?;
            hrs.push(hr);
            lrs.push(lr);
        }
        let lr_b = concat(&lrs.iter().collect::<Vec<_>>(), 0)?;
        let hr_b = concat(&hrs.iter().collect::<Vec<_>>(), 0)?;
        let loss = train_step(model, &mut opt, &lr_b, &hr_b)?;
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iters) {
            info!("iter {it}/{}: l1 {loss:.6}", cfg.iters);
            report.log.push((it, loss));
            on_log(it, loss);
        }
    }
    Ok(report)
}

/// Mean PSNR of a super-resolver and of bicubic upscaling over HR images
/// (RGB, peak 1, `crop` border pixels removed).
pub fn eval_vs_bicubic<F>(sr: F, hr_set: &[Tensor], scale: usize, crop: usize) -> Result<(f64, f64)>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if hr_set.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let (mut pm, mut pb) = (0.0, 0.0);
    for hr in hr_set {
        let hr = crate::data::crop_to_multiple(hr, scale)?;
        let lr = degrade(&hr, scale)?;
        let (_, _, h, w) = hr.dims4("eval")?;
        pm += psnr(&sr(&lr)?, &hr, 1.0, crop, false)?;
        pb += psnr(&bicubic_resize(&lr, h, w)?, &hr, 1.0, crop, false)?;
    }
    let n = hr_set.len() as f64;
    Ok((pm / n, pb / n))
}
