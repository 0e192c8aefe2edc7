//! RGB images, masks, and their binary PPM/PGM/PNG encodings.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::InvalidArgument(format!(
                "image data length {} does not match {width}×{height}×3",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
            ..self.clone()
        }
    }

    /// `w × h` sub-image with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        let mut out = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(x, y, self.pixel(x0 + x, y0 + y));
            }
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` of set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.data.iter().map(|&v| to_u8(v)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    bytes.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// 16-bit RGB PNG.
pub fn write_png16(path: &Path, img: &Image) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut w = enc
        .write_header()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let data: Vec<u8> = img
        .data
        .iter()
        .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    w.write_image_data(&data).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Parses a binary netpbm header, returning `(magic, width, height, maxval,
/// payload offset)`.
fn parse_header(bytes: &[u8]) -> Option<(String, usize, usize, usize, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).ok()?.to_string());
    }
    // Exactly one whitespace byte separates the header from the payload.
    let offset = i + 1;
    Some((
        fields[0].clone(),
        fields[1].parse().ok()?,
        fields[2].parse().ok()?,
        fields[3].parse().ok()?,
        offset,
    ))
}

fn read_netpbm(path: &Path, magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, w, h, maxval, off) =
        parse_header(&bytes).ok_or_else(|| Error::dataset(path, "malformed netpbm header"))?;
    if m != magic || maxval != 255 {
        return Err(Error::dataset(path, format!("expected {magic} with maxval 255, found {m} with maxval {maxval}")));
    }
    let need = w * h * channels;
    if bytes.len() < off + need {
        return Err(Error::dataset(
            path,
            format!("truncated payload: {} of {need} bytes", bytes.len().saturating_sub(off)),
        ));
    }
    Ok((w, h, bytes[off..off + need].to_vec()))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let (w, h, px) = read_netpbm(path, "P6", 3)?;
    Image::from_data(w, h, px.into_iter().map(|b| b as f64 / 255.0).collect())
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    let (w, h, px) = read_netpbm(path, "P5", 1)?;
    Ok(Mask {
        width: w,
        height: h,
        data: px.into_iter().map(|b| b >= 128).collect(),
    })
}
