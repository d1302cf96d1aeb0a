//! PNG conversion between files and [`Tensor3`] / [`BinaryMask`].
//!
//! Images are normalized to `[0, 1]`. Gray inputs load as one channel, color
//! inputs as three (alpha is dropped).

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::noise::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_dynamic(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(image_err(path))
}

/// Convert a decoded image into a normalized tensor.
pub fn tensor_from_dynamic<T: Scalar>(img: &DynamicImage) -> Tensor3<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        Tensor3::from_fn(h, w, 3, |r, c, k| T::narrow(f64::from(rgb.get_pixel(c as u32, r as u32)[k])))
    } else {
        let gray = img.to_luma32f();
        Tensor3::from_fn(h, w, 1, |r, c, _| T::narrow(f64::from(gray.get_pixel(c as u32, r as u32)[0])))
    }
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor3<T>> {
    Ok(tensor_from_dynamic(&load_dynamic(path)?))
}

#[inline]
fn quantize8<T: Scalar>(v: T) -> u8 {
    (v.wide().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit encoding of a 1- or 3-channel tensor.
pub fn tensor_to_dynamic<T: Scalar>(t: &Tensor3<T>) -> Result<DynamicImage> {
    let (h, w, ch) = t.shape();
    match ch {
        1 => Ok(DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([quantize8(t.get(y as usize, x as usize, 0))])
        }))),
        3 => Ok(DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = t.pixel(y as usize, x as usize);
            image::Rgb([quantize8(p[0]), quantize8(p[1]), quantize8(p[2])])
        }))),
        n => Err(Error::invalid("channels", format!("can only encode 1 or 3 channels, got {n}"))),
    }
}

pub fn save_tensor<T: Scalar>(t: &Tensor3<T>, path: &Path) -> Result<()> {
    tensor_to_dynamic(t)?.save(path).map_err(image_err(path))
}

/// Mask as 8-bit gray, ones written as 255.
pub fn mask_to_image(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    mask_to_image(mask).save(path).map_err(image_err(path))
}

/// Any nonzero pixel becomes one.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let labels = load_labels(path)?;
    let (h, w) = (labels.height() as usize, labels.width() as usize);
    BinaryMask::new(h, w, labels.pixels().map(|p| p[0] != 0).collect())
}

/// Raw integer pixel values of a gray PNG (8- or 16-bit).
pub fn load_labels(path: &Path) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    let img = load_dynamic(path)?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => ImageBuffer::from_fn(g.width(), g.height(), |x, y| {
            Luma([u16::from(g.get_pixel(x, y)[0])])
        }),
        other => other.to_luma16(),
    })
}

/// Single-channel values in `[0, 1]` written as 16-bit gray.
pub fn save_gray16<T: Scalar>(t: &Tensor3<T>, path: &Path) -> Result<()> {
    if t.channels() != 1 {
        return Err(Error::invalid("channels", format!("expected 1, got {}", t.channels())));
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(t.width() as u32, t.height() as u32, |x, y| {
            let v = t.get(y as usize, x as usize, 0).wide().clamp(0.0, 1.0);
            Luma([(v * 65535.0).round() as u16])
        });
    img.save(path).map_err(image_err(path))
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let io_err = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// File stem as UTF-8, lossily.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
