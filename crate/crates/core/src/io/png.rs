use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use ndarray::{Array2, Array3};

use super::FormatError;
use crate::error::{Error, Result};
use crate::geometry::Image;

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes an image as 8-bit PNG (gray for one channel, RGB for three).
pub fn encode_image_png(img: &Image) -> Result<Vec<u8>> {
    let (c, h, w) = img.data().dim();
    let data = img.data();
    let dynamic = if c == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(data[[0, y as usize, x as usize]])])
        }))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (i, j) = (y as usize, x as usize);
            image::Rgb([
                to_u8(data[[0, i, j]]),
                to_u8(data[[1, i, j]]),
                to_u8(data[[2, i, j]]),
            ])
        }))
    };
    let mut buf = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::InvalidInput(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

/// Decodes a PNG into a gray or RGB image; alpha is dropped.
pub fn decode_image_png(bytes: &[u8]) -> std::result::Result<Image, FormatError> {
    let dynamic = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| FormatError(format!("png decoding failed: {e}")))?;
    let data = match dynamic.color().channel_count() {
        1 | 2 => {
            let g = dynamic.to_luma8();
            let (w, h) = g.dimensions();
            Array3::from_shape_fn((1, h as usize, w as usize), |(_, i, j)| {
                g.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
            })
        }
        _ => {
            let rgb = dynamic.to_rgb8();
            let (w, h) = rgb.dimensions();
            Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
                rgb.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
            })
        }
    };
    Image::new(data).map_err(|e| FormatError(e.to_string()))
}

/// Raw single-channel 8-bit PNG of small integer labels.
pub fn encode_mask_png(mask: &Array2<u8>) -> Result<Vec<u8>> {
    let (h, w) = mask.dim();
    let g = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([mask[[y as usize, x as usize]]])
    });
    let mut buf = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(g)
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::InvalidInput(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

pub fn decode_mask_png(bytes: &[u8]) -> std::result::Result<Array2<u8>, FormatError> {
    let dynamic = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| FormatError(format!("png decoding failed: {e}")))?;
    if dynamic.color() != image::ColorType::L8 {
        return Err(FormatError(format!(
            "mask must be 8-bit single channel, got {:?}",
            dynamic.color()
        )));
    }
    let g = dynamic.to_luma8();
    let (w, h) = g.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        g.get_pixel(j as u32, i as u32)[0]
    }))
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    super::write_bytes(path, &encode_image_png(img)?)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = super::read_bytes(path)?;
    decode_image_png(&bytes).map_err(|e| e.at(path))
}

pub fn write_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    super::write_bytes(path, &encode_mask_png(mask)?)
}

pub fn read_mask(path: &Path) -> Result<Array2<u8>> {
    let bytes = super::read_bytes(path)?;
    decode_mask_png(&bytes).map_err(|e| e.at(path))
}
