//! The network, written once against [`Backend`].

use super::backend::{Backend, Init};
use super::config::CraftConfig;
use crate::error::{Error, Result};
use crate::quant::{INPUT_SITE, OUTPUT_SITE};
use crate::tensor::Tensor;

const LN_EPS: f32 = 1e-5;
const L2_EPS: f32 = 1e-12;
const PROJ_STD: f32 = 0.02;

/// Convolution with stride 1, "same" padding and a bias. The input passes the
/// `{name}.in` activation site unless `quant_in` is false; the weight always
/// passes its own site.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv<B: Backend>(
    b: &mut B,
    name: &str,
    x: &B::T,
    cin: usize,
    cout: usize,
    k: usize,
    groups: usize,
    init: Init,
    quant_in: bool,
) -> Result<B::T> {
    let x = if quant_in {
        b.quant_act(&format!("{name}.in"), x)?
    } else {
        x.clone()
    };
    let wname = format!("{name}.weight");
    let w = b.param(&wname, &[cout, cin / groups, k, k], init)?;
    let w = b.quant_weight(&wname, &w)?;
    let bias = b.param(&format!("{name}.bias"), &[cout], Init::Zeros)?;
    b.conv2d(&x, &w, Some(&bias), 1, k / 2, groups)
}

fn conv3<B: Backend>(b: &mut B, name: &str, x: &B::T, cin: usize, cout: usize) -> Result<B::T> {
    conv(b, name, x, cin, cout, 3, 1, Init::FanInUniform, true)
}

fn dw3<B: Backend>(b: &mut B, name: &str, x: &B::T, c: usize) -> Result<B::T> {
    conv(b, name, x, c, c, 3, c, Init::FanInUniform, true)
}

fn proj<B: Backend>(b: &mut B, name: &str, x: &B::T, cin: usize, cout: usize) -> Result<B::T> {
    conv(b, name, x, cin, cout, 1, 1, Init::TruncNormal(PROJ_STD), true)
}

fn norm<B: Backend>(b: &mut B, name: &str, x: &B::T, c: usize) -> Result<B::T> {
    let g = b.param(&format!("{name}.weight"), &[c], Init::Ones)?;
    let beta = b.param(&format!("{name}.bias"), &[c], Init::Zeros)?;
    b.layer_norm(x, &g, &beta, LN_EPS)
}

fn dims<B: Backend>(b: &B, x: &B::T) -> (usize, usize, usize, usize) {
    let s = b.shape_of(x);
    (s[0], s[1], s[2], s[3])
}

/// High-frequency enhancement residual block.
pub fn hferb<B: Backend>(b: &mut B, p: &str, x: &B::T) -> Result<B::T> {
    let (_, c, _, _) = dims(b, x);
    if c % 2 != 0 {
        return Err(Error::Model(format!("{p}: channel split needs an even count, got {c}")));
    }
    let h = c / 2;
    let lo = b.narrow(x, 1, 0, h)?;
    let hi = b.narrow(x, 1, h, h)?;
    let lfe = conv(b, &format!("{p}.lfe"), &lo, h, h, 3, 1, Init::FanInUniform, true)?;
    let lfe = b.gelu(&lfe);
    let pooled = b.max_pool2d(&hi, 3, 1, 1)?;
    let hfe = conv(b, &format!("{p}.hfe"), &pooled, h, h, 1, 1, Init::FanInUniform, true)?;
    let hfe = b.gelu(&hfe);
    let cat = b.concat(&[lfe, hfe], 1)?;
    let fused = conv(b, &format!("{p}.fuse"), &cat, c, c, 1, 1, Init::FanInUniform, true)?;
    b.add(&fused, x)
}

/// Relative offsets of a `wh×ww` window, normalized by `norm`, and for every
/// (query, key) token pair the row of its offset.
pub fn relative_offsets(wh: usize, ww: usize, norm: f32) -> (Tensor, Vec<usize>) {
    let (rh, rw) = (2 * wh - 1, 2 * ww - 1);
    let table = Tensor::from_fn(&[rh * rw, 2], |i| {
        let (r, k) = (i / 2, i % 2);
        let v = if k == 0 {
            (r / rw) as f32 - (wh - 1) as f32
        } else {
            (r % rw) as f32 - (ww - 1) as f32
        };
        v / norm
    });
    let t = wh * ww;
    let mut idx = Vec::with_capacity(t * t);
    for a in 0..t {
        for k in 0..t {
            let dy = (a / ww) as isize - (k / ww) as isize + wh as isize - 1;
            let dx = (a % ww) as isize - (k % ww) as isize + ww as isize - 1;
            idx.push(dy as usize * rw + dx as usize);
        }
    }
    (table, idx)
}

/// Per-head bias `[heads, T, T]` for one window shape, taking heads
/// `head0..head0+heads` of the generator output.
fn position_bias<B: Backend>(
    b: &mut B,
    p: &str,
    cfg: &CraftConfig,
    window: (usize, usize),
    head0: usize,
    heads: usize,
) -> Result<B::T> {
    let m = cfg.heads;
    let hid = 4 * m;
    let norm = (cfg.pad_multiple() - 1).max(1) as f32;
    let (table, idx) = relative_offsets(window.0, window.1, norm);
    let t = window.0 * window.1;
    let table = b.constant(table);
    let w1 = b.param(&format!("{p}.pos.fc1.weight"), &[hid, 2], Init::TruncNormal(PROJ_STD))?;
    let b1 = b.param(&format!("{p}.pos.fc1.bias"), &[hid], Init::Zeros)?;
    let w2 = b.param(&format!("{p}.pos.fc2.weight"), &[m, hid], Init::TruncNormal(PROJ_STD))?;
    let b2 = b.param(&format!("{p}.pos.fc2.bias"), &[m], Init::Zeros)?;
    let h = b.linear_rows(&table, &w1, &b1)?;
    let h = b.gelu(&h);
    let out = b.linear_rows(&h, &w2, &b2)?;
    let out = b.narrow(&out, 1, head0, heads)?;
    let pairs = b.index_rows(&out, &idx)?;
    let pairs = b.permute(&pairs, &[1, 0])?;
    b.reshape(&pairs, &[heads, t, t])
}

const TO_WINDOWS: [usize; 7] = [0, 3, 5, 1, 4, 6, 2];
const FROM_WINDOWS: [usize; 7] = [0, 3, 6, 1, 4, 2, 5];

/// `[N, heads·d, H, W]` → `[N·nWin·heads, T, d]`.
pub(crate) fn to_windows<B: Backend>(b: &mut B, x: &B::T, heads: usize, win: (usize, usize)) -> Result<B::T> {
    let (n, c, h, w) = dims(b, x);
    let d = c / heads;
    let (wh, ww) = win;
    let x = b.reshape(x, &[n, heads, d, h / wh, wh, w / ww, ww])?;
    let x = b.permute(&x, &TO_WINDOWS)?;
    b.reshape(&x, &[n * (h / wh) * (w / ww) * heads, wh * ww, d])
}

pub(crate) fn from_windows<B: Backend>(b: &mut B, x: &B::T, shape: (usize, usize, usize, usize), heads: usize, win: (usize, usize)) -> Result<B::T> {
    let (n, c, h, w) = shape;
    let d = c / heads;
    let (wh, ww) = win;
    let x = b.reshape(x, &[n, h / wh, w / ww, heads, wh, ww, d])?;
    let x = b.permute(&x, &FROM_WINDOWS)?;
    b.reshape(&x, &[n, c, h, w])
}

/// Attention of one head group inside non-overlapping windows.
#[allow(clippy::too_many_arguments)]
fn window_attention<B: Backend>(
    b: &mut B,
    site: &str,
    q: &B::T,
    k: &B::T,
    v: &B::T,
    bias: &B::T,
    heads: usize,
    win: (usize, usize),
) -> Result<B::T> {
    let shape = dims(b, q);
    let d = shape.1 / heads;
    let t = win.0 * win.1;
    let qw = to_windows(b, q, heads, win)?;
    let qw = b.scale(&qw, 1.0 / (d as f32).sqrt());
    let kw = to_windows(b, k, heads, win)?;
    let vw = to_windows(b, v, heads, win)?;
    let qw = b.quant_act(&format!("{site}.q"), &qw)?;
    let kw = b.quant_act(&format!("{site}.k"), &kw)?;
    let vw = b.quant_act(&format!("{site}.v"), &vw)?;
    let logits = b.bmm(&qw, &kw, false, true)?;
    let bw = b.shape_of(&logits)[0];
    let logits = b.reshape(&logits, &[bw / heads, heads, t, t])?;
    let logits = b.add_bcast(&logits, bias)?;
    let logits = b.reshape(&logits, &[bw, t, t])?;
    let attn = b.softmax_last(&logits)?;
    let attn = b.quant_act(&format!("{site}.softmax"), &attn)?;
    let out = b.bmm(&attn, &vw, false, false)?;
    from_windows(b, &out, shape, heads, win)
}

/// Shift rectangle window attention block. The input extents must be
/// multiples of the padding multiple.
pub fn srwab<B: Backend>(b: &mut B, p: &str, cfg: &CraftConfig, x: &B::T, shifted: bool) -> Result<B::T> {
    let (_, c, h, w) = dims(b, x);
    if c % cfg.heads != 0 {
        return Err(Error::Model(format!("{p}: {c} channels not divisible by {} heads", cfg.heads)));
    }
    let pm = cfg.pad_multiple();
    if h % pm != 0 || w % pm != 0 {
        return Err(Error::Model(format!("{p}: {h}x{w} is not a multiple of {pm}")));
    }
    let xn = norm(b, &format!("{p}.norm1"), x, c)?;
    let qkv = proj(b, &format!("{p}.qkv"), &xn, c, 3 * c)?;
    let q = b.narrow(&qkv, 1, 0, c)?;
    let k = b.narrow(&qkv, 1, c, c)?;
    let v = b.narrow(&qkv, 1, 2 * c, c)?;
    let lepe = dw3(b, &format!("{p}.v_conv"), &v, c)?;

    let half = c / 2;
    let mb = cfg.heads / 2;
    let mut outs = Vec::with_capacity(2);
    for (j, win) in [cfg.window_a, cfg.window_b].into_iter().enumerate() {
        let bias = position_bias(b, p, cfg, win, j * mb, mb)?;
        let mut parts = Vec::with_capacity(3);
        for t in [&q, &k, &v] {
            let s = b.narrow(t, 1, j * half, half)?;
            let s = if shifted {
                b.roll(&s, &[(2, -((win.0 / 2) as isize)), (3, -((win.1 / 2) as isize))])?
            } else {
                s
            };
            parts.push(s);
        }
        let o = window_attention(b, &format!("{p}.attn{j}"), &parts[0], &parts[1], &parts[2], &bias, mb, win)?;
        let o = if shifted {
            b.roll(&o, &[(2, (win.0 / 2) as isize), (3, (win.1 / 2) as isize)])?
        } else {
            o
        };
        outs.push(o);
    }
    let attn = b.concat(&outs, 1)?;
    let attn = b.add(&attn, &lepe)?;
    let y = proj(b, &format!("{p}.proj"), &attn, c, c)?;
    let y = b.add(&y, x)?;

    let hid = cfg.mlp_hidden();
    let z = norm(b, &format!("{p}.norm2"), &y, c)?;
    let z = proj(b, &format!("{p}.fc1"), &z, c, hid)?;
    let z = b.gelu(&z);
    let z = proj(b, &format!("{p}.fc2"), &z, hid, c)?;
    b.add(&z, &y)
}

/// Hybrid fusion block: channel attention with queries from `xh` and
/// keys/values from `xs`, followed by a gated feed-forward.
pub fn hfb<B: Backend>(b: &mut B, p: &str, cfg: &CraftConfig, xs: &B::T, xh: &B::T) -> Result<B::T> {
    let shape = dims(b, xs);
    if b.shape_of(xh) != b.shape_of(xs) {
        return Err(Error::Model(format!(
            "{p}: fusion inputs differ in shape: {:?} vs {:?}",
            b.shape_of(xs),
            b.shape_of(xh)
        )));
    }
    let (n, c, h, w) = shape;
    let q = proj(b, &format!("{p}.q"), xh, c, c)?;
    let q = dw3(b, &format!("{p}.q_dw"), &q, c)?;
    let xsn = norm(b, &format!("{p}.norm1"), xs, c)?;
    let k = proj(b, &format!("{p}.k"), &xsn, c, c)?;
    let k = dw3(b, &format!("{p}.k_dw"), &k, c)?;
    let v = proj(b, &format!("{p}.v"), &xsn, c, c)?;
    let v = dw3(b, &format!("{p}.v_dw"), &v, c)?;

    let q = b.reshape(&q, &[n, c, h * w])?;
    let k = b.reshape(&k, &[n, c, h * w])?;
    let v = b.reshape(&v, &[n, c, h * w])?;
    let q = b.l2_normalize_last(&q, L2_EPS);
    let k = b.l2_normalize_last(&k, L2_EPS);
    let q = b.quant_act(&format!("{p}.attn.q"), &q)?;
    let k = b.quant_act(&format!("{p}.attn.k"), &k)?;
    let v = b.quant_act(&format!("{p}.attn.v"), &v)?;
    let logits = b.bmm(&q, &k, false, true)?;
    let log_t = b.param(&format!("{p}.log_temp"), &[1], Init::Zeros)?;
    let neg = b.scale(&log_t, -1.0);
    let inv_t = b.exp(&neg);
    let logits = b.scale_by(&logits, &inv_t)?;
    let attn = b.softmax_last(&logits)?;
    let attn = b.quant_act(&format!("{p}.attn.softmax"), &attn)?;
    let o = b.bmm(&attn, &v, false, false)?;
    let o = b.reshape(&o, &[n, c, h, w])?;
    let fuse = b.add(&o, xs)?;

    let hid = cfg.imlp_hidden();
    let f = norm(b, &format!("{p}.norm2"), &fuse, c)?;
    let ga = proj(b, &format!("{p}.ffn.fc_a"), &f, c, hid)?;
    let ga = dw3(b, &format!("{p}.ffn.dw_a"), &ga, hid)?;
    let gb = proj(b, &format!("{p}.ffn.fc_b"), &f, c, hid)?;
    let gb = dw3(b, &format!("{p}.ffn.dw_b"), &gb, hid)?;
    let ga = b.gelu(&ga);
    let g = b.mul(&ga, &gb)?;
    let out = proj(b, &format!("{p}.ffn.fc_out"), &g, hid, c)?;
    b.add(&out, &fuse)
}

/// One cross-refinement fusion block.
pub fn crfb<B: Backend>(b: &mut B, p: &str, cfg: &CraftConfig, x: &B::T) -> Result<B::T> {
    let xh = hferb(b, &format!("{p}.hferb"), x)?;
    let mut xs = xh.clone();
    for s in 0..cfg.n_srwab {
        xs = srwab(b, &format!("{p}.srwab{s}"), cfg, &xs, s % 2 == 1)?;
    }
    hfb(b, &format!("{p}.hfb"), cfg, &xs, &xh)
}

/// One residual group: blocks, a 3×3 conv, and a skip over the group.
pub fn rcrfg<B: Backend>(b: &mut B, g: usize, cfg: &CraftConfig, x: &B::T) -> Result<B::T> {
    let mut y = x.clone();
    for k in 0..cfg.n_crfb {
        y = crfb(b, &format!("body.{g}.blocks.{k}"), cfg, &y)?;
    }
    let c = cfg.channels;
    let y = conv3(b, &format!("body.{g}.conv"), &y, c, c)?;
    b.add(&y, x)
}

/// Full network: `N×3×h×w` → `N×3×rh×rw`.
pub fn craft_forward<B: Backend>(b: &mut B, cfg: &CraftConfig, lr: &B::T) -> Result<B::T> {
    let s = b.shape_of(lr);
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::Model(format!("expected an N×3×H×W input, got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let pm = cfg.pad_multiple();
    if h < pm || w < pm {
        return Err(Error::Model(format!("input {h}x{w} is smaller than the minimum {pm}x{pm}")));
    }
    let c = cfg.channels;
    let x = b.quant_act(INPUT_SITE, lr)?;
    let (ph, pw) = ((pm - h % pm) % pm, (pm - w % pm) % pm);
    let x = if ph + pw > 0 { b.pad_reflect(&x, ph, pw)? } else { x };
    let shallow = conv(b, "conv_first", &x, 3, c, 3, 1, Init::FanInUniform, false)?;
    let feat = if cfg.n_rcrfg > 0 {
        let mut y = shallow.clone();
        for g in 0..cfg.n_rcrfg {
            y = rcrfg(b, g, cfg, &y)?;
        }
        let y = conv3(b, "conv_after_body", &y, c, c)?;
        b.add(&y, &shallow)?
    } else {
        shallow
    };
    let feat = if ph > 0 { b.narrow(&feat, 2, 0, h)? } else { feat };
    let feat = if pw > 0 { b.narrow(&feat, 3, 0, w)? } else { feat };
    let r = cfg.scale;
    let up = conv3(b, "upsample.conv", &feat, c, 3 * r * r)?;
    let out = b.pixel_shuffle(&up, r)?;
    b.quant_act(OUTPUT_SITE, &out)
}
