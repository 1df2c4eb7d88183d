use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage, RgbaImage};

use crate::error::{shape_err, Error, Result};
use crate::raster::Image;
use crate::semantics::Mask;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB buffer of a 3-channel image, clamped to `[0, 1]`.
pub fn to_rgb8(img: &Image) -> Result<RgbImage> {
    if img.channels != 3 {
        return Err(shape_err(format!(
            "expected 3 channels, got {}",
            img.channels
        )));
    }
    let data = img.data.iter().map(|v| quantize(*v)).collect();
    RgbImage::from_raw(img.width as u32, img.height as u32, data)
        .ok_or_else(|| shape_err("image buffer size"))
}

pub fn save_rgb(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    to_rgb8(img)?.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// PNG bytes of a 3-channel image.
pub fn encode_png_rgb(img: &Image) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_rgb8(img)?.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decodes any 8-bit image file to RGB floats in `[0, 1]`. Images with an
/// alpha channel are composited over black.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Image> {
    Ok(load_image(path)?.0)
}

/// Decodes an 8-bit image to color composited over black plus, for images
/// with an alpha channel, the `H×W×1` alpha.
pub fn load_image(path: impl AsRef<Path>) -> Result<(Image, Option<Image>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?;
    if !img.color().has_alpha() {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|v| *v as f64 / 255.0).collect();
        return Ok((Image::from_data(w as usize, h as usize, 3, data)?, None));
    }
    let rgba = img.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut color = Vec::with_capacity(3 * w * h);
    let mut alpha = Vec::with_capacity(w * h);
    for px in rgba.as_raw().chunks_exact(4) {
        let a = px[3] as f64 / 255.0;
        color.extend(px[..3].iter().map(|v| a * *v as f64 / 255.0));
        alpha.push(a);
    }
    Ok((
        Image::from_data(w, h, 3, color)?,
        Some(Image::from_data(w, h, 1, alpha)?),
    ))
}

/// Writes color composited over black together with its alpha as an RGBA
/// PNG with straight (unassociated) color.
pub fn save_rgba(path: impl AsRef<Path>, color: &Image, alpha: &Image) -> Result<()> {
    if color.channels != 3
        || alpha.channels != 1
        || color.width != alpha.width
        || color.height != alpha.height
    {
        return Err(shape_err(
            "save_rgba needs matching 3-channel color and 1-channel alpha",
        ));
    }
    let mut data = Vec::with_capacity(4 * alpha.data.len());
    for (c, &a) in color.data.chunks_exact(3).zip(&alpha.data) {
        let qa = quantize(a);
        let stored = qa as f64 / 255.0;
        data.extend(
            c.iter()
                .map(|v| if qa == 0 { 0 } else { quantize(v / stored) }),
        );
        data.push(qa);
    }
    RgbaImage::from_raw(color.width as u32, color.height as u32, data)
        .ok_or_else(|| shape_err("image buffer size"))?
        .save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Single-channel PNG, 0 = background, 255 = selected.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    mask_to_gray(mask).save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// PNG bytes of a mask, as written by [`write_mask`].
pub fn encode_png_mask(mask: &Mask) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    mask_to_gray(mask).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn mask_to_gray(mask: &Mask) -> GrayImage {
    let data = mask.data.iter().map(|b| if *b { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width as u32, mask.height as u32, data).expect("mask buffer size")
}

/// Reads a mask; any nonzero luminance counts as selected.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let gray = image::open(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(Mask {
        width: w as usize,
        height: h as usize,
        data: gray.as_raw().iter().map(|v| *v >= 128).collect(),
    })
}
