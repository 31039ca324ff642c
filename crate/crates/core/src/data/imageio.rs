//! Conversion between `[-1, 1]` float tensors and 8-bit images.

use std::path::Path;

use image::{imageops::FilterType, DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit level to `[-1, 1]`.
pub fn from_u8(q: u8) -> f32 {
    q as f32 / 127.5 - 1.0
}

/// `[-1, 1]` to the nearest 8-bit level (values outside are clamped).
pub fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// `[C, H, W]` tensor (C = 1 or 3) to an 8-bit image.
pub fn tensor_to_image(t: &Tensor<f32>) -> Result<DynamicImage> {
    let s = t.shape();
    if s.len() != 3 || (s[0] != 1 && s[0] != 3) {
        return Err(Error::Contract(format!("expected [1|3, H, W] image, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let d = t.data();
    Ok(if c == 3 {
        let mut buf = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for ch in 0..3 {
                buf.push(to_u8(d[ch * plane + i]));
            }
        }
        DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size"))
    } else {
        let buf = d.iter().map(|&v| to_u8(v)).collect();
        DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer size"))
    })
}

/// 8-bit image to a `[channels, H, W]` tensor without resizing.
pub fn image_to_tensor(img: &DynamicImage, channels: usize) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let data = if channels == 3 {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        let mut data = vec![0.0; 3 * plane];
        for i in 0..plane {
            for ch in 0..3 {
                data[ch * plane + i] = from_u8(raw[i * 3 + ch]);
            }
        }
        data
    } else {
        img.to_luma8().as_raw().iter().map(|&q| from_u8(q)).collect()
    };
    Tensor::from_vec(&[channels, h, w], data).expect("image buffer size")
}

/// Center-crops to a square and resizes to `size x size`.
pub fn square_resize(img: &DynamicImage, size: usize) -> DynamicImage {
    let (w, h) = (img.width(), img.height());
    let side = w.min(h);
    let cropped = img.crop_imm((w - side) / 2, (h - side) / 2, side, side);
    if side as usize == size {
        cropped
    } else {
        cropped.resize_exact(size as u32, size as u32, FilterType::Triangle)
    }
}

pub fn save_tensor_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    tensor_to_image(t)?.save(path)?;
    Ok(())
}

pub fn load_tensor_image(path: &Path, channels: usize) -> Result<Tensor<f32>> {
    let img = image::open(path)?;
    Ok(image_to_tensor(&img, channels))
}
