//! Binary PPM (P6) patches and PGM (P5) masks.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{malformed, read_file, write_file, Result};

/// Maps `[0, 1]` to 8 bits with rounding.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(path: &Path, bytes: &[u8], width: usize, height: usize, subtype: PnmSubtype, color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| malformed(path, e))?;
    Ok(out)
}

/// Writes interleaved RGB values in `[0, 1]`.
pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height * 3 {
        return Err(malformed(path, format!("expected {} values, got {}", width * height * 3, pixels.len())));
    }
    let bytes: Vec<u8> = pixels.iter().map(|&v| quantize(v)).collect();
    let data = encode(path, &bytes, width, height, PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)?;
    write_file(path, &data)
}

/// Writes a binary mask; nonzero entries become 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, mask: &[u8]) -> Result<()> {
    if mask.len() != width * height {
        return Err(malformed(path, format!("expected {} values, got {}", width * height, mask.len())));
    }
    let bytes: Vec<u8> = mask.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
    let data = encode(path, &bytes, width, height, PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)?;
    write_file(path, &data)
}

fn decode(path: &Path, magic: &[u8; 2]) -> Result<image::DynamicImage> {
    let bytes = read_file(path)?;
    if !bytes.starts_with(magic) {
        return Err(malformed(path, format!("expected a {} file", String::from_utf8_lossy(magic))));
    }
    image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| malformed(path, e))
}

/// Reads a P6 file as `(width, height, pixels in [0, 1])`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = decode(path, b"P6")?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok((w as usize, h as usize, pixels))
}

/// Reads a P5 file as `(width, height, 0/1 mask)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = decode(path, b"P5")?.to_luma8();
    let (w, h) = img.dimensions();
    let mask = img.into_raw().into_iter().map(|b| u8::from(b >= 128)).collect();
    Ok((w as usize, h as usize, mask))
}
