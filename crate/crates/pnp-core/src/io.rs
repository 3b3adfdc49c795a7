//! Netpbm (binary PGM/PPM, 8- and 16-bit) and PFM image I/O.
//!
//! PGM/PPM quantize on write (samples are clamped to [0,1] and scaled by the
//! maxval); PFM stores raw `f32` samples and is the lossless-enough format the
//! tests use for round trips. Internally images stay planar `f64`; interleaving
//! happens only here.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Sample depth for Netpbm output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmDepth {
    /// maxval 255, one byte per sample
    Eight,
    /// maxval 65535, two bytes per sample, big-endian
    Sixteen,
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::format(path, msg)
}

/// Read a PGM (P5), PPM (P6) or PFM (Pf/PF) file by magic number.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(0..2) {
        Some(b"P5") | Some(b"P6") => read_pnm(path, &bytes),
        Some(b"Pf") | Some(b"PF") => read_pfm(path, &bytes),
        _ => Err(fmt_err(path, "unknown magic number (expected P5, P6, Pf or PF)")),
    }
}

/// Write PGM for 1-channel images, PPM for 3-channel images.
pub fn write_pnm(path: &Path, img: &Image, depth: PnmDepth) -> Result<()> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidArgument(format!(
                "pnm output needs 1 or 3 channels, image has {c}"
            )))
        }
    };
    let maxval: u32 = match depth {
        PnmDepth::Eight => 255,
        PnmDepth::Sixteen => 65535,
    };
    let (w, h, c) = img.shape();
    let mut out = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(ch, y, x).clamp(0.0, 1.0);
                let q = (v * maxval as f64).round() as u32;
                match depth {
                    PnmDepth::Eight => out.push(q as u8),
                    PnmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write a little-endian PFM ("Pf" grayscale, "PF" color).
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let magic = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::InvalidArgument(format!(
                "pfm output needs 1 or 3 channels, image has {c}"
            )))
        }
    };
    let (w, h, c) = img.shape();
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    // PFM rows run bottom-to-top.
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(img.get(ch, y, x) as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Netpbm header tokenizer: whitespace-separated tokens, `#` comments.
struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderScanner { bytes, pos: 0 }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    /// Position just past the single whitespace byte that terminates the header.
    fn data_start(&self) -> usize {
        self.pos + 1
    }
}

fn parse_usize(path: &Path, tok: Option<&[u8]>, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| fmt_err(path, format!("missing {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fmt_err(path, format!("bad {what}")))
}

fn read_pnm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut sc = HeaderScanner::new(bytes);
    let magic = sc.token().unwrap();
    let channels = if magic == b"P5" { 1 } else { 3 };
    let w = parse_usize(path, sc.token(), "width")?;
    let h = parse_usize(path, sc.token(), "height")?;
    let maxval = parse_usize(path, sc.token(), "maxval")?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(fmt_err(path, "bad dimensions or maxval"));
    }
    let two_byte = maxval > 255;
    let data = &bytes[sc.data_start()..];
    let n = w * h * channels;
    let need = n * if two_byte { 2 } else { 1 };
    if data.len() < need {
        return Err(fmt_err(path, format!("truncated pixel data: {} < {}", data.len(), need)));
    }
    let scale = 1.0 / maxval as f64;
    let mut img = Image::zeros(w, h, channels);
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let i = (y * w + x) * channels + c;
                let v = if two_byte {
                    u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
                } else {
                    data[i] as f64
                };
                img.set(c, y, x, v * scale);
            }
        }
    }
    Ok(img)
}

fn read_pfm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut sc = HeaderScanner::new(bytes);
    let magic = sc.token().unwrap();
    let channels = if magic == b"Pf" { 1 } else { 3 };
    let w = parse_usize(path, sc.token(), "width")?;
    let h = parse_usize(path, sc.token(), "height")?;
    let scale_tok = sc.token().ok_or_else(|| fmt_err(path, "missing scale"))?;
    let scale: f64 = std::str::from_utf8(scale_tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fmt_err(path, "bad scale"))?;
    if w == 0 || h == 0 || scale == 0.0 {
        return Err(fmt_err(path, "bad dimensions or scale"));
    }
    let little_endian = scale < 0.0;
    let data = &bytes[sc.data_start()..];
    let n = w * h * channels;
    if data.len() < 4 * n {
        return Err(fmt_err(path, format!("truncated pixel data: {} < {}", data.len(), 4 * n)));
    }
    let mut img = Image::zeros(w, h, channels);
    for (row, y) in (0..h).rev().enumerate() {
        for x in 0..w {
            for c in 0..channels {
                let i = 4 * ((row * w + x) * channels + c);
                let quad = [data[i], data[i + 1], data[i + 2], data[i + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(quad)
                } else {
                    f32::from_be_bytes(quad)
                };
                img.set(c, y, x, v as f64);
            }
        }
    }
    Ok(img)
}
