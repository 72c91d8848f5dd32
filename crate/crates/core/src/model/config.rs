//! Architecture hyperparameters and their `key=value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CraftConfig {
    pub channels: usize,
    pub heads: usize,
    pub n_rcrfg: usize,
    pub n_crfb: usize,
    pub n_srwab: usize,
    pub mlp_ratio: f32,
    pub imlp_ratio: f32,
    pub window_a: (usize, usize),
    pub window_b: (usize, usize),
    pub scale: usize,
}

impl Default for CraftConfig {
    fn default() -> Self {
        Self {
            channels: 48,
            heads: 6,
            n_rcrfg: 4,
            n_crfb: 2,
            n_srwab: 2,
            mlp_ratio: 2.0,
            imlp_ratio: 2.66,
            window_a: (4, 16),
            window_b: (16, 4),
            scale: 4,
        }
    }
}

impl CraftConfig {
    pub fn with_scale(scale: usize) -> Self {
        Self {
            scale,
            ..Self::default()
        }
    }

    /// The small configuration used for desk-scale training runs.
    pub fn tiny(scale: usize) -> Self {
        Self {
            channels: 16,
            heads: 4,
            n_rcrfg: 1,
            scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.channels == 0 || self.channels % 2 != 0 {
            return bad(format!("channels must be even and positive, got {}", self.channels));
        }
        if self.heads == 0 || self.heads % 2 != 0 {
            return bad(format!("heads must be even and positive, got {}", self.heads));
        }
        if self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.mlp_ratio <= 0.0 || self.imlp_ratio <= 0.0 {
            return bad("expansion ratios must be positive".into());
        }
        for (h, w) in [self.window_a, self.window_b] {
            if h == 0 || w == 0 || self.pad_multiple() % h != 0 || self.pad_multiple() % w != 0 {
                return bad(format!("window {h}x{w} does not tile the padding multiple"));
            }
        }
        Ok(())
    }

    /// Inputs are padded to multiples of this before the body.
    pub fn pad_multiple(&self) -> usize {
        let m = [self.window_a.0, self.window_a.1, self.window_b.0, self.window_b.1];
        m.into_iter().fold(1, lcm)
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.channels as f32 * self.mlp_ratio).round() as usize
    }

    pub fn imlp_hidden(&self) -> usize {
        (self.channels as f32 * self.imlp_ratio).ceil() as usize
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "channels={}", self.channels);
        let _ = writeln!(s, "heads={}", self.heads);
        let _ = writeln!(s, "n_rcrfg={}", self.n_rcrfg);
        let _ = writeln!(s, "n_crfb={}", self.n_crfb);
        let _ = writeln!(s, "n_srwab={}", self.n_srwab);
        let _ = writeln!(s, "mlp_ratio={}", self.mlp_ratio);
        let _ = writeln!(s, "imlp_ratio={}", self.imlp_ratio);
        let _ = writeln!(s, "window_a={}x{}", self.window_a.0, self.window_a.1);
        let _ = writeln!(s, "window_b={}x{}", self.window_b.0, self.window_b.1);
        let _ = writeln!(s, "scale={}", self.scale);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CorruptHeader(format!("config line without '=': {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::CorruptHeader(format!("config missing key {k:?}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::CorruptHeader(format!("config key {k:?} has bad value {v:?}")))
        }
        let win = |k: &str| -> Result<(usize, usize)> {
            let v = get(k)?;
            let (a, b) = v
                .split_once('x')
                .ok_or_else(|| Error::CorruptHeader(format!("config key {k:?} has bad value {v:?}")))?;
            Ok((num(k, a)?, num(k, b)?))
        };
        let cfg = Self {
            channels: num("channels", get("channels")?)?,
            heads: num("heads", get("heads")?)?,
            n_rcrfg: num("n_rcrfg", get("n_rcrfg")?)?,
            n_crfb: num("n_crfb", get("n_crfb")?)?,
            n_srwab: num("n_srwab", get("n_srwab")?)?,
            mlp_ratio: num("mlp_ratio", get("mlp_ratio")?)?,
            imlp_ratio: num("imlp_ratio", get("imlp_ratio")?)?,
            window_a: win("window_a")?,
            window_b: win("window_b")?,
            scale: num("scale", get("scale")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
