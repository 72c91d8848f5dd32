//! Post-training quantization: per-site calibration, EMA folding across
//! calibration samples, boundary refinement and the full pipeline.

use std::collections::HashMap;
use std::str::FromStr;

use log::{debug, info, warn};

use super::calib::{adc, minmax_calibrate, percentile_calibrate, valid_bounds, DEGENERATE_WIDTH};
use super::grid::{QuantParams, PASS_THROUGH_BITS};
use super::site::{channel_site, default_measure, MeasureType, QuantSite, QuantTable, SiteKind, INPUT_SITE, OUTPUT_SITE};
use crate::autograd::{Adam, Optimizer, Parameter, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::model::{craft_forward, layout, CraftModel, EvalBackend, TapeBackend};
use crate::par;
use crate::tensor::{concat, Tensor};

/// Bit-width of the model input and output sites.
pub const IO_BITS: u32 = 8;

/// How per-tensor bounds are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// ADC with FGO on high-frequency sites, then boundary refinement.
    Fgo,
    /// ADC with FEATURE everywhere, then boundary refinement.
    Feature,
    MinMax,
    Percentile(f64),
}

impl Method {
    pub fn refines(&self) -> bool {
        matches!(self, Self::Fgo | Self::Feature)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fgo => "fgo",
            Self::Feature => "feature",
            Self::MinMax => "minmax",
            Self::Percentile(_) => "percentile",
        }
    }

    /// Measure used at `site` under this method.
    pub fn measure(&self, site: &str, kind: SiteKind) -> MeasureType {
        match self {
            Self::Fgo => default_measure(site, kind),
            _ => MeasureType::Feature,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgo" => Ok(Self::Fgo),
            "feature" => Ok(Self::Feature),
            "minmax" => Ok(Self::MinMax),
            "percentile" => Ok(Self::Percentile(0.999)),
            _ => Err(invalid("Method", format!("unknown method {s:?} (fgo, feature, minmax, percentile)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtqConfig {
    pub bits: u32,
    pub method: Method,
    pub epochs: usize,
    pub batch: usize,
    /// Refinement step size; `None` picks 2e-4 at 8 bits and 2e-3 below.
    pub lr: Option<f32>,
    pub beta: f32,
    pub per_channel_weights: bool,
}

impl PtqConfig {
    pub fn new(bits: u32) -> Self {
        Self {
            bits,
            method: Method::Fgo,
            epochs: 10,
            batch: 2,
            lr: None,
            beta: 0.9,
            per_channel_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![4, 6, 8, PASS_THROUGH_BITS].contains(&self.bits) {
            return Err(invalid("PtqConfig", format!("bits must be 4, 6 or 8, got {}", self.bits)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(invalid("PtqConfig", format!("beta must be in [0, 1), got {}", self.beta)));
        }
        if self.batch == 0 {
            return Err(invalid("PtqConfig", "batch must be ≥ 1"));
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f32 {
        self.lr.unwrap_or(if self.bits >= 8 { 2e-4 } else { 2e-3 })
    }

    /// Width at `site`: the input and output stay at 8 bits.
    pub fn bits_for(&self, site: &str) -> u32 {
        if self.bits == PASS_THROUGH_BITS {
            PASS_THROUGH_BITS
        } else if site == INPUT_SITE || site == OUTPUT_SITE {
            IO_BITS
        } else {
            self.bits
        }
    }
}

fn bounds_of(x: &Tensor, bits: u32, method: Method, measure: MeasureType) -> Result<(f32, f32)> {
    match method {
        Method::Fgo | Method::Feature => {
            let r = adc(x, bits, measure)?;
            Ok((r.l, r.u))
        }
        Method::MinMax => minmax_calibrate(x).map(|(l, u)| valid_bounds(l, u)),
        Method::Percentile(p) => percentile_calibrate(x, p).map(|(l, u)| valid_bounds(l, u)),
    }
}

/// Activations of one full-precision forward pass in site order.
pub fn observe_activations(model: &CraftModel, lr: &Tensor) -> Result<Vec<(String, Tensor)>> {
    let mut seen: Vec<(String, Tensor)> = Vec::new();
    let mut obs = |name: &str, t: &Tensor| {
        if !seen.iter().any(|(n, _)| n == name) {
            seen.push((name.to_string(), t.clone()));
        }
    };
    let mut b = EvalBackend::new(&model.store).with_observer(&mut obs);
    craft_forward(&mut b, &model.config, lr)?;
    drop(b);
    Ok(seen)
}

/// Exponential moving average of per-sample bounds: the first sample sets the
/// bounds, each later one updates `v ← β·v + (1−β)·v_new`.
#[derive(Debug, Clone, Default)]
pub struct EmaBounds {
    order: Vec<String>,
    values: HashMap<String, (f32, f32)>,
}

impl EmaBounds {
    pub fn fold(&mut self, site: &str, l: f32, u: f32, beta: f32) {
        match self.values.get_mut(site) {
            Some(v) => {
                v.0 = beta * v.0 + (1.0 - beta) * l;
                v.1 = beta * v.1 + (1.0 - beta) * u;
            }
            None => {
                self.order.push(site.to_string());
                self.values.insert(site.to_string(), (l, u));
            }
        }
    }

    pub fn get(&self, site: &str) -> Option<(f32, f32)> {
        self.values.get(site).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, (f32, f32))> {
        self.order.iter().map(|n| (n.as_str(), self.values[n]))
    }
}

/// Stage 1: per-sample bounds of every activation site folded in calibration
/// order. Sites of one sample are calibrated in parallel.
pub fn calibrate_activations(model: &CraftModel, calib: &[Tensor], cfg: &PtqConfig) -> Result<EmaBounds> {
    if calib.is_empty() {
        return Err(Error::Dataset("calibration set is empty".into()));
    }
    let mut ema = EmaBounds::default();
    for (i, x) in calib.iter().enumerate() {
        let acts = observe_activations(model, x)?;
        let bounds = par::map_range(acts.len(), |k| {
            let (name, t) = &acts[k];
            let measure = cfg.method.measure(name, SiteKind::Activation);
            bounds_of(t, cfg.bits_for(name), cfg.method, measure)
        });
        for ((name, _), b) in acts.iter().zip(bounds) {
            let (l, u) = b?;
            ema.fold(name, l, u, cfg.beta);
        }
        debug!("calibration sample {}/{}: {} sites", i + 1, calib.len(), acts.len());
    }
    Ok(ema)
}

/// Weight sites of the model with their bounds, per tensor or per output channel.
pub fn calibrate_weights(model: &CraftModel, cfg: &PtqConfig) -> Result<Vec<QuantSite>> {
    let pm = model.config.pad_multiple();
    let sites = layout(&model.config, pm, pm)?.weight_sites;
    let jobs = par::map_range(sites.len(), |i| -> Result<Vec<QuantSite>> {
        let (name, _) = &sites[i];
        let w = &model
            .store
            .get(name)
            .ok_or_else(|| Error::Model(format!("missing weight {name:?}")))?
            .value;
        let measure = MeasureType::Feature;
        let site = |n: String, l: f32, u: f32| -> Result<QuantSite> {
            Ok(QuantSite {
                name: n,
                kind: SiteKind::Weight,
                measure,
                params: QuantParams::new(l, u, cfg.bits)?,
            })
        };
        if cfg.per_channel_weights {
            let co = w.shape()[0];
            let per = w.numel() / co;
            (0..co)
                .map(|k| {
                    let slice = Tensor::new(&[per], w.data()[k * per..(k + 1) * per].to_vec())?;
                    let (l, u) = bounds_of(&slice, cfg.bits, cfg.method, measure)?;
                    site(channel_site(name, k), l, u)
                })
                .collect()
        } else {
            let (l, u) = bounds_of(w, cfg.bits, cfg.method, measure)?;
            Ok(vec![site(name.clone(), l, u)?])
        }
    });
    let mut out = Vec::new();
    for j in jobs {
        out.extend(j?);
    }
    Ok(out)
}

/// Every site of the model at the pass-through width.
pub fn pass_through_table(model: &CraftModel) -> Result<QuantTable> {
    let pm = model.config.pad_multiple();
    let l = layout(&model.config, pm, pm)?;
    let qp = QuantParams::new(-1.0, 1.0, PASS_THROUGH_BITS)?;
    let mut t = QuantTable::new();
    for a in &l.activation_sites {
        t.set(QuantSite {
            name: a.clone(),
            kind: SiteKind::Activation,
            measure: default_measure(a, SiteKind::Activation),
            params: qp,
        });
    }
    for (w, _) in &l.weight_sites {
        t.set(QuantSite {
            name: w.clone(),
            kind: SiteKind::Weight,
            measure: MeasureType::Feature,
            params: qp,
        });
    }
    Ok(t)
}

/// Stage-1 table: activation bounds from the EMA pass, weight bounds from one
/// calibration of each weight tensor.
pub fn initial_table(model: &CraftModel, calib: &[Tensor], cfg: &PtqConfig) -> Result<QuantTable> {
    cfg.validate()?;
    if calib.is_empty() {
        return Err(Error::Dataset("calibration set is empty".into()));
    }
    if cfg.bits == PASS_THROUGH_BITS {
        return pass_through_table(model);
    }
    let ema = calibrate_activations(model, calib, cfg)?;
    let mut t = QuantTable::new();
    for (name, (l, u)) in ema.iter() {
        let (l, u) = valid_bounds(l, u);
        t.insert(QuantSite {
            name: name.to_string(),
            kind: SiteKind::Activation,
            measure: cfg.method.measure(name, SiteKind::Activation),
            params: QuantParams::new(l, u, cfg.bits_for(name))?,
        })?;
    }
    for s in calibrate_weights(model, cfg)? {
        t.insert(s)?;
    }
    Ok(t)
}

/// Losses recorded by boundary refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub initial_loss: f64,
    /// Mean calibration loss after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of the returned table.
    pub final_loss: f64,
    /// Number of updates that had to be clamped to `u = l + 1e-6`.
    pub clamped: usize,
}

/// Generic refinement loop over the trainable (non pass-through) sites of
/// `table`. `step` returns `(site, dl, du)` gradients for a batch of sample
/// indices; `eval` returns the mean loss over all samples. The table with the
/// lowest mean loss seen at an epoch boundary (the initial one included) is
/// kept.
pub fn refine_loop<S, E>(table: &mut QuantTable, n_samples: usize, cfg: &PtqConfig, mut step: S, mut eval: E) -> Result<RefineReport>
where
    S: FnMut(&QuantTable, &[usize]) -> Result<Vec<(String, f32, f32)>>,
    E: FnMut(&QuantTable) -> Result<f64>,
{
    let names: Vec<String> = table
        .sites()
        .iter()
        .filter(|s| !s.params.is_pass_through())
        .map(|s| s.name.clone())
        .collect();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut params: Vec<Parameter> = names
        .iter()
        .map(|n| {
            let p = table.get(n).expect("site listed above").params;
            Parameter::new(Tensor::new(&[2], vec![p.l, p.u]).expect("two values"))
        })
        .collect();
    let mut opt = Adam::new(cfg.learning_rate());
    let initial_loss = eval(table)?;
    let mut best = (initial_loss, table.clone());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut clamped = 0;
    let order: Vec<usize> = (0..n_samples).collect();
    for epoch in 0..cfg.epochs {
        for batch in order.chunks(cfg.batch) {
            let grads = step(table, batch)?;
            for p in params.iter_mut() {
                p.zero_grad();
            }
            for (site, dl, du) in grads {
                if let Some(&i) = index.get(site.as_str()) {
                    let g = params[i].grad.data_mut();
                    g[0] += dl;
                    g[1] += du;
                }
            }
            let mut refs: Vec<&mut Parameter> = params.iter_mut().collect();
            opt.step(&mut refs);
            for (i, name) in names.iter().enumerate() {
                let v = params[i].value.data_mut();
                if v[1] <= v[0] {
                    warn!("site {name}: upper bound {} crossed lower bound {}, clamped", v[1], v[0]);
                    v[1] = v[0] + DEGENERATE_WIDTH;
                    clamped += 1;
                }
                let site = table.get_mut(name).expect("site listed above");
                site.params.l = v[0];
                site.params.u = v[1];
            }
        }
        let loss = eval(table)?;
        info!("refinement epoch {}/{}: mean loss {loss:.6}", epoch + 1, cfg.epochs);
        epoch_losses.push(loss);
        if loss < best.0 {
            best = (loss, table.clone());
        }
    }
    *table = best.1;
    Ok(RefineReport {
        initial_loss,
        epoch_losses,
        final_loss: best.0,
        clamped,
    })
}

fn batch_of(xs: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    let parts: Vec<&Tensor> = idx.iter().map(|&i| &xs[i]).collect();
    concat(&parts, 0)
}

fn l1_sum(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum()
}

/// Calibration loss of a table: mean over samples of `‖FP(x) − Q(x)‖₁`.
pub fn calibration_loss(model: &CraftModel, table: &QuantTable, calib: &[Tensor], teacher: &[Tensor]) -> Result<f64> {
    let losses = par::map_range(calib.len(), |i| -> Result<f64> {
        Ok(l1_sum(&model.forward_quant(&calib[i], table)?, &teacher[i]))
    });
    let mut s = 0.0;
    for l in losses {
        s += l?;
    }
    Ok(s / calib.len() as f64)
}

/// Gradient-based refinement of every bound against the full-precision
/// outputs with weights frozen. Loss per batch: `(1/B)·Σ ‖X − X̂‖₁`.
pub fn boundary_refine(model: &CraftModel, table: &mut QuantTable, calib: &[Tensor], cfg: &PtqConfig) -> Result<RefineReport> {
    cfg.validate()?;
    if calib.is_empty() {
        return Err(Error::Dataset("calibration set is empty".into()));
    }
    let teacher: Vec<Tensor> = calib.iter().map(|x| model.forward(x)).collect::<Result<_>>()?;
    let step = |t: &QuantTable, idx: &[usize]| -> Result<Vec<(String, f32, f32)>> {
        let x = batch_of(calib, idx)?;
        let target = batch_of(&teacher, idx)?;
        let mut b = TapeBackend::new(&model.store, false).with_quant(t, true);
        let xin = b.input(x);
        let out = craft_forward(&mut b, &model.config, &xin)?;
        let loss = b.tape.l1_loss(out, &target, 1.0 / idx.len() as f32)?;
        b.tape.backward(loss)?;
        Ok(b.bound_grads())
    };
    let eval = |t: &QuantTable| calibration_loss(model, t, calib, &teacher);
    refine_loop(table, calib.len(), cfg, step, eval)
}

/// Result of the full pipeline.
#[derive(Debug, Clone)]
pub struct PtqOutcome {
    pub table: QuantTable,
    /// Table after stage 1, before refinement.
    pub stage1: QuantTable,
    pub refine: Option<RefineReport>,
}

/// Stage 1 (per-sample calibration with EMA folding, one-shot weight
/// calibration) followed, for the ADC methods with `epochs > 0`, by boundary
/// refinement.
pub fn ptq_pipeline(model: &CraftModel, calib: &[Tensor], cfg: &PtqConfig) -> Result<PtqOutcome> {
    let stage1 = initial_table(model, calib, cfg)?;
    let mut table = stage1.clone();
    let refine = if cfg.method.refines() && cfg.epochs > 0 && cfg.bits != PASS_THROUGH_BITS {
        Some(boundary_refine(model, &mut table, calib, cfg)?)
    } else {
        None
    };
    Ok(PtqOutcome { table, stage1, refine })
}

/// Fake-quantized toy layer used to exercise refinement without a network.
#[doc(hidden)]
pub fn toy_quant_layer(tape: &mut Tape, x: Var, qp: &QuantParams) -> Result<(Var, Var, Var)> {
    let l = tape.leaf(Tensor::new(&[1], vec![qp.l])?, true);
    let u = tape.leaf(Tensor::new(&[1], vec![qp.u])?, true);
    let y = tape.fake_quant(x, l, u, qp.bits, None)?;
    Ok((y, l, u))
}
