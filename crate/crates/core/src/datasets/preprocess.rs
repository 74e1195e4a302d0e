use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Crop side as a fraction of the resized side.
pub const CROP_RATIO: f64 = 0.875;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Images are resized to `resize x resize`, then cropped to `crop x crop`
/// (random offset in training, centred in evaluation). Pixel values are
/// mapped from `[0, 255]` to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resize: usize,
    pub crop: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::with_resize(128)
    }
}

impl PreprocessConfig {
    pub fn with_resize(resize: usize) -> Self {
        Self {
            resize,
            crop: (resize as f64 * CROP_RATIO).round() as usize,
        }
    }

    pub fn max_offset(&self) -> usize {
        self.resize - self.crop
    }
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    /// Channel-major `[3, crop, crop]`.
    pub data: Vec<f32>,
    /// Top-left corner `(x, y)` of the crop in resized coordinates.
    pub offset: (usize, usize),
}

pub fn crop_offset<R: Rng + ?Sized>(cfg: &PreprocessConfig, mode: Mode, rng: &mut R) -> (usize, usize) {
    let max = cfg.max_offset();
    match mode {
        Mode::Eval => (max / 2, max / 2),
        Mode::Train => (rng.random_range(0..=max), rng.random_range(0..=max)),
    }
}

pub fn to_unit_range(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn preprocess<R: Rng + ?Sized>(img: &RgbImage, mode: Mode, rng: &mut R, cfg: &PreprocessConfig) -> Preprocessed {
    let resized;
    let img = if img.width() as usize == cfg.resize && img.height() as usize == cfg.resize {
        img
    } else {
        resized = image::imageops::resize(img, cfg.resize as u32, cfg.resize as u32, FilterType::Triangle);
        &resized
    };
    let offset = crop_offset(cfg, mode, rng);
    let n = cfg.crop;
    let mut data = vec![0f32; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let p = img.get_pixel((x + offset.0) as u32, (y + offset.1) as u32);
            for c in 0..3 {
                data[c * n * n + y * n + x] = to_unit_range(p[c]);
            }
        }
    }
    Preprocessed { data, offset }
}
