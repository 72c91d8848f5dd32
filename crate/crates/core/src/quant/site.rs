//! Quantization sites and the table that holds their bounds.

use std::collections::HashMap;

use super::grid::QuantParams;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteKind {
    Weight,
    Activation,
}

/// Error measure used when calibrating a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasureType {
    /// Mean absolute error of FFT magnitudes.
    Fgo,
    /// Mean absolute error of the tensor itself.
    Feature,
}

/// Activation site quantizing the network input.
pub const INPUT_SITE: &str = "input";
/// Activation site quantizing the network output.
pub const OUTPUT_SITE: &str = "output";

/// Whether a site's name places it inside a high-frequency enhancement block
/// or at the model boundary.
pub fn is_frequency_site(name: &str) -> bool {
    name == INPUT_SITE || name == OUTPUT_SITE || name.contains(".hferb.")
}

/// Default measure for a site: FGO for activations of high-frequency blocks and
/// the model input/output, FEATURE everywhere else.
pub fn default_measure(name: &str, kind: SiteKind) -> MeasureType {
    if kind == SiteKind::Activation && is_frequency_site(name) {
        MeasureType::Fgo
    } else {
        MeasureType::Feature
    }
}

/// Name of the `k`-th per-channel sub-site of a weight.
pub fn channel_site(weight: &str, k: usize) -> String {
    format!("{weight}#{k}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantSite {
    pub name: String,
    pub kind: SiteKind,
    pub measure: MeasureType,
    pub params: QuantParams,
}

/// Bounds of one weight, either a single pair or one pair per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBounds {
    pub l: Vec<f32>,
    pub u: Vec<f32>,
    pub bits: u32,
    pub per_channel: bool,
}

/// Ordered collection of sites with name lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuantTable {
    sites: Vec<QuantSite>,
    index: HashMap<String, usize>,
}

impl QuantTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sites(sites: Vec<QuantSite>) -> Result<Self> {
        let mut t = Self::new();
        for s in sites {
            t.insert(s)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, site: QuantSite) -> Result<()> {
        if self.index.contains_key(&site.name) {
            return Err(invalid("QuantTable::insert", format!("duplicate site {:?}", site.name)));
        }
        self.index.insert(site.name.clone(), self.sites.len());
        self.sites.push(site);
        Ok(())
    }

    /// Inserts or replaces.
    pub fn set(&mut self, site: QuantSite) {
        match self.index.get(&site.name) {
            Some(&i) => self.sites[i] = site,
            None => {
                self.index.insert(site.name.clone(), self.sites.len());
                self.sites.push(site);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&QuantSite> {
        self.index.get(name).map(|&i| &self.sites[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut QuantSite> {
        self.index.get(name).map(|&i| &mut self.sites[i])
    }

    pub fn sites(&self) -> &[QuantSite] {
        &self.sites
    }

    pub fn sites_mut(&mut self) -> &mut [QuantSite] {
        &mut self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Bounds of activation site `name`, if quantized.
    pub fn activation(&self, name: &str) -> Option<QuantParams> {
        self.get(name).map(|s| s.params)
    }

    /// Bounds of weight `name`: the per-tensor site if present, otherwise the
    /// `name#k` per-channel sites for `channels` output channels.
    pub fn weight(&self, name: &str, channels: usize) -> Option<WeightBounds> {
        if let Some(s) = self.get(name) {
            return Some(WeightBounds {
                l: vec![s.params.l],
                u: vec![s.params.u],
                bits: s.params.bits,
                per_channel: false,
            });
        }
        let first = self.get(&channel_site(name, 0))?;
        let bits = first.params.bits;
        let mut l = Vec::with_capacity(channels);
        let mut u = Vec::with_capacity(channels);
        for k in 0..channels {
            let s = self.get(&channel_site(name, k))?;
            l.push(s.params.l);
            u.push(s.params.u);
        }
        Some(WeightBounds {
            l,
            u,
            bits,
            per_channel: true,
        })
    }
}
