//! Raster types and binary PPM/PGM I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

/// Per-pixel activations (probabilities), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-first floats in [0, 1], shape `[3, H, W]`.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = self.data[p * 3 + c] as f32 / 255.0;
            }
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.data)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let (w, h, data) = read_pnm(path, "P6", 3)?;
        Ok(RgbImage {
            width: w,
            height: h,
            data,
        })
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Mean (row, col) of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut r, mut c) = (0.0, 0.0);
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            n += 1;
            r += (i / self.width) as f64;
            c += (i % self.width) as f64;
        }
        (n > 0).then(|| (r / n as f64, c / n as f64))
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    /// Reads a PGM; any nonzero value is foreground.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let (w, h, data) = read_pnm(path, "P5", 1)?;
        Ok(Mask {
            width: w,
            height: h,
            data: data.into_iter().map(|b| b != 0).collect(),
        })
    }
}

impl ProbMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim("prob map", &[height, width], &[data.len()]));
        }
        Ok(ProbMap {
            width,
            height,
            data,
        })
    }

    pub fn threshold(&self, t: f32) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| p >= t).collect(),
        }
    }

    /// Writes probabilities quantized to 0..=255 as a PGM.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let (w, h, data) = read_pnm(path, "P5", 1)?;
        ProbMap::new(w, h, data.into_iter().map(|b| b as f32 / 255.0).collect())
    }
}

fn read_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("truncated PNM header".into()));
    }
    Ok(tok)
}

fn read_pnm(path: &Path, magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let m = read_token(&mut r)?;
    if m != magic {
        return Err(Error::Format(format!("{}: expected {magic}, found {m}", path.display())));
    }
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("{}: bad header field `{s}`", path.display())))
    };
    let w = parse(read_token(&mut r)?)?;
    let h = parse(read_token(&mut r)?)?;
    let maxval = parse(read_token(&mut r)?)?;
    if maxval != 255 {
        return Err(Error::Format(format!("{}: only 8-bit PNM is supported", path.display())));
    }
    let mut data = vec![0u8; w * h * channels];
    r.read_exact(&mut data)
        .map_err(|_| Error::Format(format!("{}: truncated pixel data", path.display())))?;
    Ok((w, h, data))
}

pub const GT_TINT: [u8; 3] = [0, 255, 0];
pub const PRED_TINT: [u8; 3] = [255, 0, 0];
pub const BOTH_TINT: [u8; 3] = [255, 255, 0];

/// Tints ground-truth-only pixels green, prediction-only pixels red and
/// their intersection yellow, each blended at alpha 0.5 over `image`.
pub fn render_overlay(image: &RgbImage, pred: &ProbMap, gt: &Mask, threshold: f32) -> Result<RgbImage> {
    let dims = [image.height, image.width];
    if [pred.height, pred.width] != dims {
        return Err(Error::dim("overlay", &dims, &[pred.height, pred.width]));
    }
    if [gt.height, gt.width] != dims {
        return Err(Error::dim("overlay", &dims, &[gt.height, gt.width]));
    }
    let mut out = image.clone();
    for (i, (&p, &g)) in pred.data.iter().zip(&gt.data).enumerate() {
        let tint = match (p >= threshold, g) {
            (true, true) => BOTH_TINT,
            (true, false) => PRED_TINT,
            (false, true) => GT_TINT,
            (false, false) => continue,
        };
        for c in 0..3 {
            let px = &mut out.data[i * 3 + c];
            *px = ((*px as u16 + tint[c] as u16 + 1) / 2) as u8;
        }
    }
    Ok(out)
}
