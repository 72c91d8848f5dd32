//! The super-resolution network and its parameter store.

mod backend;
pub mod blocks;
mod config;
mod shape;
mod store;
mod tape_backend;

pub use backend::{Backend, EvalBackend, Init, Observer, ParamDecl};
pub use blocks::{craft_forward, crfb, hfb, hferb, rcrfg, relative_offsets, srwab};
pub use config::CraftConfig;
pub use shape::{MacCount, ShapeBackend};
pub use store::ParamStore;
pub use tape_backend::{BoundVars, TapeBackend};

use crate::error::Result;
use crate::quant::QuantTable;
use crate::tensor::Tensor;

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CraftModel {
    pub config: CraftConfig,
    pub store: ParamStore,
}

/// Everything the shape pass discovers about a configuration.
#[derive(Debug, Clone)]
pub struct Layout {
    pub decls: Vec<ParamDecl>,
    pub activation_sites: Vec<String>,
    pub weight_sites: Vec<(String, Vec<usize>)>,
    pub macs: MacCount,
}

/// Runs the shape-only pass on a 1×3×`h`×`w` input.
pub fn layout(cfg: &CraftConfig, h: usize, w: usize) -> Result<Layout> {
    cfg.validate()?;
    let mut b = ShapeBackend::new();
    let x = vec![1, 3, h, w];
    craft_forward(&mut b, cfg, &x)?;
    Ok(Layout {
        decls: b.decls,
        activation_sites: b.activation_sites,
        weight_sites: b.weight_sites,
        macs: b.macs,
    })
}

/// Analytic size and cost of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub param_count: usize,
    pub macs: MacCount,
    /// `2·(conv + linear MACs) + attention MACs`.
    pub flops: f64,
}

/// Parameter count and cost for an output of `out_h×out_w`.
pub fn complexity_report(cfg: &CraftConfig, out_h: usize, out_w: usize) -> Result<ComplexityReport> {
    let l = layout(cfg, out_h / cfg.scale, out_w / cfg.scale)?;
    let param_count = l.decls.iter().map(|d| d.shape.iter().product::<usize>()).sum();
    let m = l.macs;
    Ok(ComplexityReport {
        param_count,
        macs: m,
        flops: 2.0 * (m.conv + m.linear) as f64 + m.attention as f64,
    })
}

impl CraftModel {
    pub fn new(config: CraftConfig, seed: u64) -> Result<Self> {
        let pm = config.pad_multiple();
        let l = layout(&config, pm, pm)?;
        let store = ParamStore::from_decls(&l.decls, seed)?;
        Ok(Self { config, store })
    }

    pub fn forward(&self, lr: &Tensor) -> Result<Tensor> {
        let mut b = EvalBackend::new(&self.store);
        craft_forward(&mut b, &self.config, lr)
    }

    /// Forward pass with fake quantization at every site in `table`.
    pub fn forward_quant(&self, lr: &Tensor, table: &QuantTable) -> Result<Tensor> {
        let mut b = EvalBackend::new(&self.store).with_quant(table);
        craft_forward(&mut b, &self.config, lr)
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }
}
