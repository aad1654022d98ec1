//! PNG and image-directory plumbing.

use std::path::{Path, PathBuf};

use image::{imageops::FilterType, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: &[&str] = &["png"];

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// `[3,H,W]` tensor in `[0, 1]` from an 8-bit RGB buffer.
pub fn tensor_from_rgb(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches buffer")
}

/// Rounds to the nearest 8-bit level after clamping to `[0, 1]`.
pub fn rgb_from_tensor(t: &Tensor<f32>) -> Result<RgbImage> {
    let [3, h, w] = t.shape()[..] else {
        return Err(Error::Shape(format!("expected [3,H,W], got {:?}", t.shape())));
    };
    let plane = h * w;
    let d = t.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(d[i]), q(d[plane + i]), q(d[2 * plane + i])])
    }))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(tensor_from_rgb(&img.to_rgb8()))
}

/// Loads and resizes to `(width, height)` with a triangle filter.
pub fn load_resized(path: impl AsRef<Path>, size: (u32, u32)) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    if img.dimensions() == size {
        return Ok(tensor_from_rgb(&img));
    }
    let img = image::imageops::resize(&img, size.0, size.1, FilterType::Triangle);
    Ok(tensor_from_rgb(&img))
}

pub fn save_png(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    rgb_from_tensor(t)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files of `dir`, sorted by name. A single file is returned as is.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_image(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
