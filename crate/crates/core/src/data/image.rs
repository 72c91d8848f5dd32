//! 8-bit RGB images and their PPM (P6) / PNG codecs.

use std::fs;
use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{}×{} RGB image needs {} samples, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// 1×3×H×W tensor with values in [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(&[1, 3, h, w], |i| {
            let c = i / (h * w);
            let p = i % (h * w);
            self.data[p * 3 + c] as f32 / 255.0
        })
    }

    /// Quantizes a 1×3×H×W (or 1×1×H×W, replicated) tensor in [0, 1].
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4("ImageBuffer::from_tensor")?;
        if n != 1 || (c != 3 && c != 1) {
            return Err(invalid("ImageBuffer::from_tensor", format!("expected 1×3×H×W or 1×1×H×W, got {:?}", t.shape())));
        }
        let d = t.data();
        let mut data = vec![0u8; h * w * 3];
        for p in 0..h * w {
            for k in 0..3 {
                let v = d[if c == 3 { k * h * w + p } else { p }];
                data[p * 3 + k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Self::new(w, h, data)
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            let tok = ppm_token(&mut r)?;
            fields.push(tok);
        }
        if fields[0] != "P6" {
            return Err(Error::Image(format!("not a binary PPM (magic {:?})", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Image(format!("bad PPM header field {s:?}")));
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Image(format!("only 8-bit PPM supported (maxval {maxval})")));
        }
        let start = r.position() as usize;
        let need = w * h * 3;
        let rest = &bytes[start..];
        if rest.len() < need {
            return Err(Error::Image(format!("PPM payload truncated: {} of {} bytes", rest.len(), need)));
        }
        Self::new(w, h, rest[..need].to_vec())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut wr = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
            wr.write_image_data(&self.data).map_err(|e| Error::Image(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = dec.read_info().map_err(|e| Error::Image(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Image("PNG too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let px = &buf[..info.buffer_size()];
        let data: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => px.to_vec(),
            png::ColorType::Rgba => px.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => px.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => px.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            png::ColorType::Indexed => return Err(Error::Image("unexpanded palette PNG".into())),
        };
        Self::new(w, h, data)
    }

    /// Reads a PPM or PNG file, chosen by content.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(b"\x89PNG") {
            Self::decode_png(&bytes)
        } else if bytes.starts_with(b"P6") {
            Self::decode_ppm(&bytes)
        } else {
            Err(Error::Image(format!("{}: unrecognized image format", path.display())))
        }
    }

    /// Writes PNG for a `.png` extension, PPM otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let is_png = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        let bytes = if is_png { self.encode_png()? } else { self.encode_ppm() };
        fs::write(path, bytes)?;
        Ok(())
    }
}

// Whitespace-separated header token, skipping `#` comments. Consumes exactly
// one whitespace byte after the token, as the format requires before pixels.
fn ppm_token(r: &mut Cursor<&[u8]>) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Image("PPM header truncated".into()));
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            b => tok.push(b),
        }
    }
    String::from_utf8(tok).map_err(|_| Error::Image("non-ASCII PPM header".into()))
}

/// Loads every `.ppm`/`.png` file of a directory in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<Tensor>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
    }
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "png"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| ImageBuffer::load(p).map(|b| b.to_tensor())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(w: usize, h: usize) -> ImageBuffer {
        let data = (0..w * h * 3).map(|i| (i * 37 % 256) as u8).collect();
        ImageBuffer::new(w, h, data).unwrap()
    }

    #[test]
    fn ppm_and_png_round_trip() {
        let img = sample(7, 5);
        assert_eq!(ImageBuffer::decode_ppm(&img.encode_ppm()).unwrap(), img);
        assert_eq!(ImageBuffer::decode_png(&img.encode_png().unwrap()).unwrap(), img);
        let with_comment = b"P6\n# note\n2 1\n255\n\x01\x02\x03\x04\x05\x06";
        let d = ImageBuffer::decode_ppm(with_comment).unwrap();
        assert_eq!(d.data, vec![1, 2, 3, 4, 5, 6]);
        assert!(ImageBuffer::decode_ppm(b"P6\n2 1\n255\n\x01").is_err());
        assert!(ImageBuffer::decode_ppm(b"P3\n1 1\n255\n1 2 3").is_err());
    }

    #[test]
    fn tensor_round_trip_is_exact() {
        let img = sample(4, 6);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 6, 4]);
        assert_eq!(ImageBuffer::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn files_and_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample(3, 3);
        img.save(&dir.path().join("b.png")).unwrap();
        img.save(&dir.path().join("a.ppm")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert_eq!(ImageBuffer::load(&dir.path().join("b.png")).unwrap(), img);
        let all = load_dir(dir.path()).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0], all[1]);
        assert!(load_dir(&dir.path().join("missing")).is_err());
    }
}
