//! Binary portable pixmap codecs: P6 color images and P5 gray label maps,
//! both with maxval 255.
//!
//! Readers take arbitrary bytes and fail with the byte offset of the first
//! problem; they never panic. Writers emit the canonical header
//! `P6\n<w> <h>\n255\n` so write∘read is byte-exact on canonical files.

use std::fs;
use std::path::Path;

use tinyseg_core::error::{Error, Result};
use tinyseg_core::tensor::Tensor;

use crate::labels::LabelMap;

/// Caps width*height so a forged header cannot demand gigabytes.
const MAX_PIXELS: usize = 1 << 26;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::format(self.pos, msg))
    }

    fn magic(&mut self, expect: &str) -> Result<()> {
        if self.bytes.len() < 2 || &self.bytes[..2] != expect.as_bytes() {
            return self.err(format!("expected {expect} magic"));
        }
        self.pos = 2;
        Ok(())
    }

    /// Skips whitespace and `#` comments; at least one whitespace byte must
    /// separate header tokens.
    fn separator(&mut self) -> Result<()> {
        let start = self.pos;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' if self.pos > start => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return self.err("expected whitespace between header fields");
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let mut v: usize = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            if self.pos - start >= 9 {
                return self.err(format!("{what} has too many digits"));
            }
            v = v * 10 + (self.bytes[self.pos] - b'0') as usize;
            self.pos += 1;
        }
        if self.pos == start {
            return self.err(format!("expected {what}"));
        }
        Ok(v)
    }

    /// One whitespace byte ends the header; the payload starts right after.
    fn end_header(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b' ') | Some(b'\t') | Some(b'\r') | Some(b'\n') => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err("expected a single whitespace byte after maxval"),
        }
    }

    fn payload(&mut self, n: usize) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < n {
            self.pos = self.bytes.len();
            return self.err(format!("payload needs {n} bytes, file has {have}"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        if self.pos != self.bytes.len() {
            return self.err(format!(
                "{} trailing bytes after the pixel payload",
                self.bytes.len() - self.pos
            ));
        }
        Ok(slice)
    }
}

fn header(cur: &mut Cursor, magic: &str) -> Result<(usize, usize)> {
    cur.magic(magic)?;
    cur.separator()?;
    let w = cur.number("width")?;
    cur.separator()?;
    let h = cur.number("height")?;
    cur.separator()?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval} unsupported, only 255")));
    }
    cur.end_header()?;
    if w == 0 || h == 0 {
        return Err(Error::format(2, format!("degenerate image size {w}x{h}")));
    }
    if w.saturating_mul(h) > MAX_PIXELS {
        return Err(Error::format(2, format!("image size {w}x{h} exceeds the supported maximum")));
    }
    Ok((w, h))
}

/// Parses a binary P6 color image into a `[3, H, W]` tensor in `[0, 1]`.
pub fn read_ppm_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let (w, h) = header(&mut cur, "P6")?;
    let pixels = cur.payload(3 * w * h)?;
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = pixels[3 * i + c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    read_ppm_bytes(&fs::read(path)?)
}

/// Encodes a `[3, H, W]` tensor as binary P6, clamping to `[0, 1]` and
/// rounding to bytes.
pub fn write_ppm_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let shape = img.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(format!("expected a [3, H, W] image, got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..h * w {
        for c in 0..3 {
            out.push((d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    Ok(fs::write(path, write_ppm_bytes(img)?)?)
}

/// Parses a binary P5 gray map into its dimensions and raw byte values.
pub fn read_pgm_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let (w, h) = header(&mut cur, "P5")?;
    let grays = cur.payload(w * h)?;
    Ok((h, w, grays.to_vec()))
}

pub fn write_pgm_bytes(h: usize, w: usize, grays: &[u8]) -> Result<Vec<u8>> {
    if grays.len() != h * w {
        return Err(Error::shape(format!("{} gray values for a {h}x{w} map", grays.len())));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(grays);
    Ok(out)
}

/// Reads a P5 gray map as class labels validated against the class count.
pub fn read_labels(path: &Path, classes: usize, ignore: u32) -> Result<LabelMap> {
    let (h, w, grays) = read_pgm_bytes(&fs::read(path)?)?;
    LabelMap::new(h, w, classes, ignore, grays.into_iter().map(u32::from).collect())
}

/// Writes a label map as a P5 gray file, one byte per pixel.
pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    if labels.classes() > 256 || labels.ignore() > 255 {
        return Err(Error::config(format!(
            "{} classes with ignore {} cannot be stored in 8-bit grays",
            labels.classes(),
            labels.ignore()
        )));
    }
    let grays: Vec<u8> = labels.data().iter().map(|&v| v as u8).collect();
    Ok(fs::write(path, write_pgm_bytes(labels.height(), labels.width(), &grays)?)?)
}
