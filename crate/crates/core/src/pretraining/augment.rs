//! Random views for the augmented-infomax objective: crop, horizontal flip
//! and colour jitter, all drawn from the caller's generator.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{preprocess, Mode, PreprocessConfig, Preprocessed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Additive brightness offset drawn from `[-b, b]` (pixel range `[-1, 1]`).
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - c, 1 + c]`.
    pub contrast: f64,
    /// Saturation factor drawn from `[1 - s, 1 + s]`.
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

pub fn augment_view<R: Rng + ?Sized>(
    img: &RgbImage,
    cfg: &PreprocessConfig,
    aug: &AugmentConfig,
    rng: &mut R,
) -> Preprocessed {
    let mut p = preprocess(img, Mode::Train, rng, cfg);
    let n = cfg.crop;
    let plane = n * n;
    if rng.random_bool(aug.flip_prob.clamp(0.0, 1.0)) {
        for c in 0..3 {
            for y in 0..n {
                p.data[c * plane + y * n..c * plane + (y + 1) * n].reverse();
            }
        }
    }
    let jitter = |r: &mut R, w: f64| if w > 0.0 { r.random_range(-w..=w) } else { 0.0 };
    let bright = jitter(rng, aug.brightness) as f32;
    let contrast = 1.0 + jitter(rng, aug.contrast) as f32;
    let sat = 1.0 + jitter(rng, aug.saturation) as f32;
    let mean = p.data.iter().sum::<f32>() / p.data.len() as f32;
    for i in 0..plane {
        let rgb = [p.data[i], p.data[plane + i], p.data[2 * plane + i]];
        let gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
        for (c, v) in rgb.into_iter().enumerate() {
            let v = gray + sat * (v - gray);
            let v = mean + contrast * (v - mean) + bright;
            p.data[c * plane + i] = v.clamp(-1.0, 1.0);
        }
    }
    p
}
