//! The "CRFT" checkpoint format.
//!
//! Layout (all integers u32 little-endian, floats f32 little-endian):
//! magic `CRFT`, version, config text length + UTF-8 `key=value` lines,
//! tensor count, then per tensor: name length, name, rank, extents, payload.
//! A trailing u8 flags a quantization table: site count, then per site:
//! name length, name, kind (0 weight, 1 activation), measure (0 FGO,
//! 1 FEATURE), l, u, bits.

use std::fs;
use std::path::Path;

use crate::autograd::Parameter;
use crate::error::{Error, Result};
use crate::model::{layout, CraftConfig, CraftModel, ParamStore};
use crate::quant::{MeasureType, QuantParams, QuantSite, QuantTable, SiteKind};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CRFT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CraftModel,
    pub quant: Option<QuantTable>,
}

impl Checkpoint {
    pub fn new(model: CraftModel, quant: Option<QuantTable>) -> Self {
        Self { model, quant }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_str(&mut out, &ck.model.config.to_text());
    put_u32(&mut out, ck.model.store.len() as u32);
    for (name, p) in ck.model.store.iter() {
        put_str(&mut out, name);
        put_u32(&mut out, p.value.rank() as u32);
        for &d in p.value.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &ck.quant {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            put_u32(&mut out, t.len() as u32);
            for s in t.sites() {
                put_str(&mut out, &s.name);
                out.push(match s.kind {
                    SiteKind::Weight => 0,
                    SiteKind::Activation => 1,
                });
                out.push(match s.measure {
                    MeasureType::Fgo => 0,
                    MeasureType::Feature => 1,
                });
                out.extend_from_slice(&s.params.l.to_le_bytes());
                out.extend_from_slice(&s.params.u.to_le_bytes());
                put_u32(&mut out, s.params.bits);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::CorruptHeader(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let text = r.string("config")?;
    let config = CraftConfig::from_text(&text).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name = r.string(&format!("tensor {i} name"))?;
        let rank = r.u32(&format!("{name} rank"))? as usize;
        if rank > 8 {
            return Err(Error::CorruptHeader(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("{name} extents"))? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::CorruptHeader(format!("{name}: size overflow")))?, &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        store.insert(&name, Parameter::new(t))?;
    }
    let quant = match r.u8("quantization flag")? {
        0 => None,
        1 => {
            let n = r.u32("site count")?;
            let mut t = QuantTable::new();
            for i in 0..n {
                let name = r.string(&format!("site {i} name"))?;
                let kind = match r.u8(&name)? {
                    0 => SiteKind::Weight,
                    1 => SiteKind::Activation,
                    k => return Err(Error::CorruptHeader(format!("{name}: site kind {k}"))),
                };
                let measure = match r.u8(&name)? {
                    0 => MeasureType::Fgo,
                    1 => MeasureType::Feature,
                    k => return Err(Error::CorruptHeader(format!("{name}: measure {k}"))),
                };
                let l = r.f32(&name)?;
                let u = r.f32(&name)?;
                let bits = r.u32(&name)?;
                let params = QuantParams::new(l, u, bits).map_err(|e| Error::CorruptHeader(format!("{name}: {e}")))?;
                t.insert(QuantSite { name: name.clone(), kind, measure, params })
                    .map_err(|_| Error::DuplicateTensor(name))?;
            }
            Some(t)
        }
        f => return Err(Error::CorruptHeader(format!("quantization flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::CorruptHeader(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    check_layout(&config, &store)?;
    Ok(Checkpoint {
        model: CraftModel { config, store },
        quant,
    })
}

// Every declared parameter must be present with its declared shape.
fn check_layout(config: &CraftConfig, store: &ParamStore) -> Result<()> {
    let pm = config.pad_multiple();
    let l = layout(config, pm, pm)?;
    if l.decls.len() != store.len() {
        return Err(Error::Model(format!(
            "checkpoint holds {} tensors, configuration declares {}",
            store.len(),
            l.decls.len()
        )));
    }
    for d in &l.decls {
        match store.get(&d.name) {
            None => return Err(Error::Model(format!("missing tensor {:?}", d.name))),
            Some(p) if p.value.shape() != d.shape.as_slice() => {
                return Err(Error::Model(format!(
                    "{}: shape {:?}, configuration expects {:?}",
                    d.name,
                    p.value.shape(),
                    d.shape
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
