//! PNG persistence: 16-bit grayscale for disparity, 8-bit RGB for images.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::{DisparityRaster, RgbImage};

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_disparity_png(path: impl AsRef<Path>) -> Result<DisparityRaster> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            DisparityRaster::new(w as usize, h as usize, buf.into_raw())
        }
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            detail: format!("expected 16-bit single-channel PNG, found {:?}", other.color()),
        }),
    }
}

pub fn write_disparity_png(raster: &DisparityRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(raster.width() as u32, raster.height() as u32, raster.codes().to_vec())
            .expect("raster buffer matches its dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}

/// Reads any 8-bit color PNG; alpha is dropped and gray is expanded.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?;
    match img {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => {
            let buf = img.to_rgb8();
            let (w, h) = buf.dimensions();
            RgbImage::new(w as usize, h as usize, buf.into_raw())
        }
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit color PNG, found {:?}", other.color()),
        }),
    }
}

pub fn write_rgb_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, image.data().to_vec())
            .expect("image buffer matches its dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}
