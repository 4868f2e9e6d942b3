use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use super::{BinaryGrid, Image};
use crate::error::{Error, Result};

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_to<W: Write>(img: &Image, out: W) -> Result<()> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    };
    let mut enc = png::Encoder::new(out, img.width() as u32, img.height() as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// 8-bit grayscale or RGB encoding.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    encode_to(img, &mut buf)?;
    Ok(buf)
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    encode_to(img, BufWriter::new(file))
}

/// Writes a single-channel grid of values in `[0, 1]`.
pub fn write_gray_png(width: usize, height: usize, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_png(&Image::new(width, height, 1, values.to_vec())?, path)
}

/// Decodes 8- or 16-bit grayscale, gray-alpha, RGB or RGBA. Alpha is dropped.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    decode_from(Cursor::new(bytes))
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    decode_from(BufReader::new(File::open(path)?))
}

fn decode_from<R: std::io::BufRead + std::io::Seek>(r: R) -> Result<Image> {
    let mut dec = png::Decoder::new(r);
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        _ => buf[..info.buffer_size()].iter().map(|&b| b as f64 / 255.0).collect(),
    };
    let (src_c, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::Png("unexpanded palette image".into())),
    };
    let data = samples.chunks_exact(src_c).flat_map(|px| px[..keep].to_vec()).collect();
    Image::new(w, h, keep, data)
}

/// Writes a 1-bit grayscale PNG, set cells white.
pub fn write_mask_png(grid: &BinaryGrid, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, grid.width() as u32, grid.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let mut writer = enc.write_header().map_err(png_err)?;
    let row_bytes = grid.width().div_ceil(8);
    let mut bytes = vec![0u8; row_bytes * grid.height()];
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            if grid.get(x, y) {
                bytes[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads any PNG and thresholds the first channel at one half.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<BinaryGrid> {
    let img = read_png(path)?;
    let c = img.channels();
    let bits = img.data().chunks_exact(c).map(|px| px[0] >= 0.5).collect();
    BinaryGrid::new(img.width(), img.height(), bits)
}
