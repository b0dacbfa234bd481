use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader};
use stereocal_core::imagegrad::{to_float_gray, FloatImage, PixelLayout, RawImage};

use crate::error::{Error, Result};

/// Loads an 8-bit grayscale (or RGB) PNG or PGM as intensities in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<FloatImage> {
    let err = |message: String| Error::Image { path: path.to_path_buf(), message };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        other => return Err(err(format!("unsupported image format {other:?}"))),
    }
    let img = reader.decode().map_err(|e| err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (layout, data) = match img {
        DynamicImage::ImageLuma8(g) => (PixelLayout::Gray8, g.into_raw()),
        DynamicImage::ImageRgb8(c) => (PixelLayout::Rgb8, c.into_raw()),
        other => return Err(err(format!("unsupported pixel type {:?}", other.color()))),
    };
    Ok(to_float_gray(&RawImage { width: w, height: h, layout, data: &data })?)
}

/// Writes an 8-bit grayscale PNG.
pub fn save_png(path: &Path, img: &FloatImage) -> Result<()> {
    let gray = GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_gray8()).expect("buffer matches size");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    gray.save_with_format(path, ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
