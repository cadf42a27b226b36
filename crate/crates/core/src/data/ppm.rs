//! Binary PPM (P6) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::vision::Image;

/// Encodes `img` as 8-bit P6, rounding each value to the nearest of 256 levels.
pub fn encode(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for v in img.pixel(y, x) {
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Decodes a P6 file with any maxval up to 65535; values are scaled to `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::data("PPM header is truncated"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::data(format!("expected P6 image, found `{}`", fields[0])));
    }
    let num =
        |s: &str, what: &str| -> Result<usize> { s.parse().map_err(|_| Error::data(format!("bad PPM {what} `{s}`"))) };
    let (w, h, maxval) = (
        num(&fields[1], "width")?,
        num(&fields[2], "height")?,
        num(&fields[3], "maxval")?,
    );
    if maxval == 0 || maxval > 65535 {
        return Err(Error::data(format!("PPM maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bpv = if maxval > 255 { 2 } else { 1 };
    let need = 3 * w * h * bpv;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::data(format!("PPM raster truncated: need {need} bytes")))?;
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..3 * plane {
        let raw = if bpv == 1 {
            raster[i] as usize
        } else {
            (raster[2 * i] as usize) << 8 | raster[2 * i + 1] as usize
        };
        let (pixel, c) = (i / 3, i % 3);
        data[c * plane + pixel] = (raw.min(maxval) as f64) / maxval as f64;
    }
    Image::new(h, w, data)
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Data { message, .. } => Error::data(format!("{}: {message}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
