//! PNG read/write for normalized `[3,h,w]` image tensors.
//!
//! Quantization maps [-1, 1] to 8-bit by `(x+1)*127.5` with
//! round-half-to-even; reading maps `v/127.5 - 1` back.

use super::{denormalize_pixel, normalize_pixel, DataError, IMG_SIZE};
use crate::nn::tensor::Tensor;
use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};
use std::path::Path;

/// Load any supported image, resize to 64x64 and normalize to [-1, 1].
/// Returns the tensor plus the source width/height (for coordinate
/// normalization against the original frame).
pub fn read_image_normalized(path: &Path) -> Result<(Tensor<f32>, usize, usize), DataError> {
    let img = image::open(path).map_err(|e| DataError::Image(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let resized = if (w, h) == (IMG_SIZE, IMG_SIZE) {
        rgb
    } else {
        image::imageops::resize(&rgb, IMG_SIZE as u32, IMG_SIZE as u32, FilterType::Triangle)
    };
    Ok((rgb8_to_tensor(&resized), w, h))
}

pub fn rgb8_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let s = img.width() as usize;
    let mut t = Tensor::zeros(vec![3, img.height() as usize, s]);
    let plane = img.height() as usize * s;
    let data = t.data_mut();
    for (x, y, p) in img.enumerate_pixels() {
        let idx = y as usize * s + x as usize;
        data[idx] = normalize_pixel(p[0]);
        data[plane + idx] = normalize_pixel(p[1]);
        data[2 * plane + idx] = normalize_pixel(p[2]);
    }
    t
}

pub fn tensor_to_rgb8(t: &Tensor<f32>) -> Result<RgbImage, DataError> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(DataError::Image(format!(
            "expected [3,h,w] tensor, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let data = t.data();
    let mut img: RgbImage = ImageBuffer::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let idx = y as usize * w + x as usize;
        *p = Rgb([
            denormalize_pixel(data[idx]),
            denormalize_pixel(data[plane + idx]),
            denormalize_pixel(data[2 * plane + idx]),
        ]);
    }
    Ok(img)
}

pub fn write_png(path: &Path, t: &Tensor<f32>) -> Result<(), DataError> {
    let img = tensor_to_rgb8(t)?;
    img.save(path)
        .map_err(|e| DataError::Image(format!("{}: {e}", path.display())))
}

/// Tile a row-major list of `[3,h,w]` images into one grid image.
pub fn tile_grid(images: &[&Tensor<f32>], cols: usize) -> Result<Tensor<f32>, DataError> {
    if images.is_empty() || cols == 0 {
        return Err(DataError::Image("empty grid".into()));
    }
    let shape = images[0].shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let rows = images.len().div_ceil(cols);
    let pad = 2usize;
    let gh = rows * (h + pad) + pad;
    let gw = cols * (w + pad) + pad;
    let mut grid = Tensor::filled(vec![3, gh, gw], 1.0);
    for (i, img) in images.iter().enumerate() {
        if img.shape() != shape.as_slice() {
            return Err(DataError::Image("grid images must share one shape".into()));
        }
        let (r, c) = (i / cols, i % cols);
        let y0 = pad + r * (h + pad);
        let x0 = pad + c * (w + pad);
        let src = img.data();
        let dst = grid.data_mut();
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    dst[ch * gh * gw + (y0 + y) * gw + (x0 + x)] = src[ch * h * w + y * w + x];
                }
            }
        }
    }
    Ok(grid)
}
