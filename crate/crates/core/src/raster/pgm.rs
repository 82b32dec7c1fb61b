//! Binary PGM (P5, maxval 255). Pixel value `v` is stored as `round(255 v)`.

use std::io;
use std::path::Path;

use super::GrayImage;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("malformed pgm: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (255.0 * v).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    let bad = |m: &str| PgmError::Format(m.to_string());
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?.to_string());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("expected P5 magic"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only maxval 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero dimension"));
    }
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated raster"))?;
    Ok(GrayImage::from_pixels(w, h, data.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), PgmError> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, PgmError> {
    decode_pgm(&std::fs::read(path)?)
}
