//! Training-time augmentation: horizontal flip, small rotation, zoom and a
//! random crop back to the original size, composed into one bilinear warp.

use rand::Rng;

use crate::config::RunConfig;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSettings {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    /// Upper bound of the zoom factor; zoom is drawn from `[1, max_zoom]`.
    pub max_zoom: f64,
}

impl AugmentSettings {
    pub fn from_config(config: &RunConfig) -> Self {
        AugmentSettings {
            flip_prob: if config.aug_flip { config.aug_flip_prob } else { 0.0 },
            max_rotation_deg: if config.aug_rotate { config.aug_max_rotation_deg } else { 0.0 },
            max_zoom: if config.aug_zoom { config.aug_max_zoom } else { 1.0 },
        }
    }

    pub fn disabled() -> Self {
        AugmentSettings {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            max_zoom: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.flip_prob <= 0.0 && self.max_rotation_deg <= 0.0 && self.max_zoom <= 1.0
    }
}

/// Mirrors a `[C, H, W]` image left to right.
pub fn hflip(image: &Tensor<f32>) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                out[row + x] = src[row + w - 1 - x];
            }
        }
    }
    Tensor::from_vec(s, out).expect("same shape")
}

/// Augments one `[C, H, W]` image. The random draws happen in a fixed order
/// (flip, angle, zoom, crop offsets) whether or not each transform is enabled,
/// so enabling one does not shift the others' streams.
pub fn augment<R: Rng + ?Sized>(image: &Tensor<f32>, settings: &AugmentSettings, rng: &mut R) -> Tensor<f32> {
    let flip = rng.gen::<f64>() < settings.flip_prob;
    let angle = rng.gen_range(-1.0..=1.0) * settings.max_rotation_deg.to_radians();
    let zoom = 1.0 + rng.gen::<f64>() * (settings.max_zoom - 1.0).max(0.0);
    let (ox, oy) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
    if settings.is_identity() {
        return image.clone();
    }
    let base = if flip { hflip(image) } else { image.clone() };
    if angle == 0.0 && zoom == 1.0 {
        return base;
    }
    let s = image.shape();
    let (h, w) = (s[1], s[2]);
    // Crop window offset in output pixels, bounded by the zoom slack.
    let shift_x = ox * (zoom - 1.0) * w as f64 / 2.0;
    let shift_y = oy * (zoom - 1.0) * h as f64 / 2.0;
    warp(&base, angle, zoom, shift_x, shift_y)
}

/// Inverse-maps each output pixel center through crop, zoom and rotation about
/// the image center and samples bilinearly with edge clamping.
fn warp(image: &Tensor<f32>, angle: f64, zoom: f64, shift_x: f64, shift_y: f64) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    let clampf = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5 - cx + shift_x) / zoom;
            let v = (y as f64 + 0.5 - cy + shift_y) / zoom;
            let sx = clampf(cos * u + sin * v + cx - 0.5, w);
            let sy = clampf(-sin * u + cos * v + cy - 0.5, h);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..c {
                let p = &src[ch * h * w..(ch + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[ch * h * w + y * w + x] = (top * (1.0 - fy) + bot * fy).clamp(-1.0, 1.0);
            }
        }
    }
    Tensor::from_vec(s, out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ramp() -> Tensor<f32> {
        let data = (0..2 * 8 * 8).map(|i| (i as f32 / 64.0) - 1.0).collect();
        Tensor::from_vec(&[2, 8, 8], data).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let img = ramp();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            assert_eq!(augment(&img, &AugmentSettings::disabled(), &mut rng), img);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp();
        assert_ne!(hflip(&img), img);
        assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn zero_angle_unit_zoom_warp_is_identity() {
        let img = ramp();
        let out = warp(&img, 0.0, 1.0, 0.0, 0.0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn output_stays_in_range_and_shape() {
        let img = ramp();
        let settings = AugmentSettings {
            flip_prob: 0.5,
            max_rotation_deg: 10.0,
            max_zoom: 1.15,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let out = augment(&img, &settings, &mut rng);
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn constant_image_is_invariant() {
        let img = Tensor::full(&[3, 8, 8], 0.25);
        let settings = AugmentSettings {
            flip_prob: 0.5,
            max_rotation_deg: 10.0,
            max_zoom: 1.15,
        };
        let out = augment(&img, &settings, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
