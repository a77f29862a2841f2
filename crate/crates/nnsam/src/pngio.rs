//! Grayscale PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nnsam_core::Grid;

use crate::error::{io_err, Error, Result};

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let mut bytes = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut bytes).map_err(|e| image_err(path, e))?;
    bytes.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

/// Reads an 8- or 16-bit grayscale image, scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Grid<f32>> {
    let d = decode(path)?;
    if d.color != png::ColorType::Grayscale {
        return Err(image_err(path, format!("expected grayscale, found {:?}", d.color)));
    }
    let data: Vec<f32> = match d.depth {
        png::BitDepth::Eight => d.bytes.iter().map(|&v| v as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => d
            .bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        other => return Err(image_err(path, format!("unsupported bit depth {other:?}"))),
    };
    Ok(Grid::new(d.height, d.width, data)?)
}

/// Reads an 8-bit label image. Grayscale values and palette indices are
/// both taken as class indices.
pub fn read_labels(path: &Path) -> Result<Grid<u8>> {
    let d = decode(path)?;
    if !matches!(d.color, png::ColorType::Grayscale | png::ColorType::Indexed) || d.depth != png::BitDepth::Eight {
        return Err(image_err(path, format!("labels must be 8-bit grayscale or indexed, found {:?} {:?}", d.color, d.depth)));
    }
    Ok(Grid::new(d.height, d.width, d.bytes)?)
}

fn write(path: &Path, width: usize, height: usize, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))
}

/// Writes values in `[0, 1]` as 16-bit grayscale; values outside are clamped.
pub fn write_gray16(path: &Path, img: &Grid<f32>) -> Result<()> {
    let bytes: Vec<u8> = img
        .iter()
        .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    write(path, img.width(), img.height(), png::BitDepth::Sixteen, &bytes)
}

pub fn write_labels(path: &Path, labels: &Grid<u8>) -> Result<()> {
    write(path, labels.width(), labels.height(), png::BitDepth::Eight, labels.as_slice())
}
