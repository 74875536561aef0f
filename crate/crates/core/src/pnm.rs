//! Portable-pixmap reading and writing for demo inputs and visualizations.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::ColorImage;

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let bytes = crate::io::read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    ColorImage::new(h as usize, w as usize, data)
}

pub fn to_rgb8(image: &ColorImage) -> RgbImage {
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let p = image.pixel(y as usize * image.width() + x as usize);
        Rgb(p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
    })
}

/// Encodes a binary (P6) portable pixmap.
pub fn encode_ppm(image: &ColorImage) -> Result<Vec<u8>> {
    let rgb = to_rgb8(image);
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

pub fn write_ppm(image: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_bytes(path, &encode_ppm(image)?)
}
