//! Image files: binary PGM (P5, 8- and 16-bit), binary PPM (P6, converted via
//! luma), and PNG when the `png` feature is enabled.

use std::path::Path;

use super::{GrayImage, Plane, RgbImage};
use crate::error::{Error, Result};

enum Decoded {
    Gray(GrayImage),
    Rgb(RgbImage),
}

/// Parses the whitespace/comment-separated header tokens of a netpbm file.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return None;
    }
    Some((tokens, i + 1))
}

fn decode_netpbm(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let bad = |detail: String| Error::format(path, detail);
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| bad("truncated netpbm header".into()))?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(format!("unsupported netpbm magic `{other}`"))),
    };
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} `{s}`")));
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let maxval = parse(&tokens[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(bad(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} outside 1..=65535")));
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let need = width * height * channels * bytes_per;
    let raster = &bytes[offset..];
    if raster.len() < need {
        return Err(bad(format!("raster truncated: need {need} bytes, found {}", raster.len())));
    }
    let scale = 1.0 / maxval as f32;
    let sample = |i: usize| -> f32 {
        let v = if bytes_per == 2 {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f32
        } else {
            raster[i] as f32
        };
        (v * scale).min(1.0)
    };
    if channels == 1 {
        let data = (0..width * height).map(sample).collect();
        Ok(Decoded::Gray(GrayImage::from_plane_clamped(Plane::new(width, height, data)?)))
    } else {
        let data = (0..width * height)
            .map(|p| [sample(3 * p), sample(3 * p + 1), sample(3 * p + 2)])
            .collect();
        Ok(Decoded::Rgb(RgbImage { width, height, data }))
    }
}

/// Decodes a P5/P6 byte buffer into grayscale.
pub fn decode_gray(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    match decode_netpbm(bytes, path)? {
        Decoded::Gray(g) => Ok(g),
        Decoded::Rgb(c) => Ok(c.to_gray()),
    }
}

/// Reads any supported image file as grayscale.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_gray(&bytes, path);
    }
    #[cfg(feature = "png")]
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        let img = image::load_from_memory(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        let rgb = img.to_rgb32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.pixels().map(|p| [p.0[0], p.0[1], p.0[2]]).collect();
        return Ok(RgbImage { width: w, height: h, data }.to_gray());
    }
    Err(Error::format(path, "unrecognised image format (expected binary PGM/PPM)"))
}

/// 8-bit P5 encoding with round-to-nearest quantisation.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// 16-bit big-endian P5 encoding.
pub fn encode_pgm16(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.pixels() {
        out.extend(((v * 65535.0).round().clamp(0.0, 65535.0) as u16).to_be_bytes());
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}
