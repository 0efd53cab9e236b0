//! PNG/JPEG decode and PNG encode. 8-bit values map to intensities as
//! `v / 255` on read and `round(v * 255)` on write.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, Image};

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads only the header to obtain `(height, width)`.
pub fn raster_dims(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Decode {
            path: path.to_path_buf(),
            source,
        },
    })?;
    Ok((h as usize, w as usize))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let rgb = decode(path)?.into_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|v| f64::from(v) / 255.0)
        .collect();
    Image::new(h as usize, w as usize, data)
}

/// Loads a single-channel mask; any nonzero value is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let gray = decode(path)?.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| u8::from(v != 0))
        .collect();
    BinaryMask::new(h as usize, w as usize, data)
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_to_rgb8(img: &Image) -> RgbImage {
    let raw = img.data().iter().map(|&v| to_u8(v)).collect();
    RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions")
}

pub fn mask_to_gray8(mask: &BinaryMask) -> GrayImage {
    let raw = mask
        .data()
        .iter()
        .map(|&v| if v != 0 { 255 } else { 0 })
        .collect();
    GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer length matches dimensions")
}

pub fn save_image_png(img: &Image, path: &Path) -> Result<()> {
    image_to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Encode {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a mask as an 8-bit PNG, 255 for set pixels and 0 elsewhere.
pub fn save_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    mask_to_gray8(mask)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Encode {
            path: path.to_path_buf(),
            source,
        })
}
