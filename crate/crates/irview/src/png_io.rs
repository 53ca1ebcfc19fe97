//! 8-bit PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use irview_core::{normalize_image, Raster, IMAGE_SIZE};

use crate::error::{Error, Result};

fn write_png(path: &Path, pixels: &[u8], width: u32, height: u32, color: png::ColorType) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn write_gray(path: &Path, pixels: &[u8], width: u32, height: u32) -> Result<()> {
    if pixels.len() != (width * height) as usize {
        return Err(Error::format(path, "pixel count does not match the image size"));
    }
    write_png(path, pixels, width, height, png::ColorType::Grayscale)
}

pub fn write_rgb(path: &Path, pixels: &[u8], width: u32, height: u32) -> Result<()> {
    if pixels.len() != 3 * (width * height) as usize {
        return Err(Error::format(path, "pixel count does not match the image size"));
    }
    write_png(path, pixels, width, height, png::ColorType::Rgb)
}

/// Reads an 8-bit single-channel PNG; returns `(pixels, width, height)`.
pub fn read_gray(path: &Path) -> Result<(Vec<u8>, u32, u32)> {
    let file = File::open(path).map_err(Error::io(path))?;
    let png_err = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!("expected 8-bit grayscale, got {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    buf.truncate(info.line_size * info.height as usize);
    Ok((buf, info.width, info.height))
}

/// Loads one view as a normalized 64×64 raster.
pub fn read_view(path: &Path) -> Result<Raster> {
    let (pixels, w, h) = read_gray(path)?;
    if (w as usize, h as usize) != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(Error::format(path, format!("expected {IMAGE_SIZE}×{IMAGE_SIZE}, got {w}×{h}")));
    }
    Ok(normalize_image(&pixels)?)
}

pub fn write_view(path: &Path, image: &Raster) -> Result<()> {
    let side = IMAGE_SIZE as u32;
    write_gray(path, &irview_core::denormalize_image(image), side, side)
}
