//! Windowed structural similarity on luma.

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub k1: f64,
    pub k2: f64,
    pub window: usize,
    pub sigma: f64,
    /// Dynamic range of the luma values.
    pub range: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            window: 11,
            sigma: 1.5,
            range: 255.0,
        }
    }
}

/// BT.601 luma in `[0, 255]`, `[H, W]`.
pub fn luma(img: &RgbImage) -> Array2<f64> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        let p = img.get_pixel(x as u32, y as u32).0;
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    })
}

fn gaussian(c: &SsimConstants) -> Vec<f64> {
    let r = (c.window / 2) as f64;
    let g: Vec<f64> = (0..c.window)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * c.sigma * c.sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over the valid region only.
fn filter(x: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let n = k.len();
    let rows: Array2<f64> = Array2::from_shape_fn((h, w + 1 - n), |(y, j)| (0..n).map(|t| k[t] * x[[y, j + t]]).sum());
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(i, j)| (0..n).map(|t| k[t] * rows[[i + t, j]]).sum())
}

/// Mean SSIM over every valid window of two equally sized luma planes.
pub fn ssim_luma(a: &Array2<f64>, b: &Array2<f64>, c: &SsimConstants) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("images {:?} and {:?} differ in size", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    if h < c.window || w < c.window {
        return Err(Error::Shape(format!("{h}x{w} image is smaller than the {0}x{0} window", c.window)));
    }
    let k = gaussian(c);
    let c1 = (c.k1 * c.range).powi(2);
    let c2 = (c.k2 * c.range).powi(2);
    let ma = filter(a, &k);
    let mb = filter(b, &k);
    let saa = filter(&(a * a), &k);
    let sbb = filter(&(b * b), &k);
    let sab = filter(&(a * b), &k);
    let mut total = 0.0;
    for (((&ma, &mb), (&saa, &sbb)), &sab) in ma.iter().zip(&mb).zip(saa.iter().zip(&sbb)).zip(&sab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / ma.len() as f64)
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ssim_luma(&luma(a), &luma(b), &SsimConstants::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: u32) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(n, n, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
    }

    /// Direct per-window computation with an explicit 2-D kernel.
    fn reference(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let c = SsimConstants::default();
        let g = gaussian(&c);
        let n = c.window;
        let (h, w) = a.dim();
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut acc = 0.0;
        let mut count = 0;
        for y in 0..=h - n {
            for x in 0..=w - n {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        ma += g[i] * g[j] * a[[y + i, x + j]];
                        mb += g[i] * g[j] * b[[y + i, x + j]];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let (da, db) = (a[[y + i, x + j]] - ma, b[[y + i, x + j]] - mb);
                        va += g[i] * g[j] * da * da;
                        vb += g[i] * g[j] * db * db;
                        cov += g[i] * g[j] * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn identical_images_score_one() {
        let a = noise(1, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inversion_scores_far_below_one() {
        let a = noise(2, 24);
        let mut b = a.clone();
        b.pixels_mut().for_each(|p| p.0 = p.0.map(|v| 255 - v));
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn symmetric_and_matches_reference() {
        let (a, b) = (luma(&noise(3, 18)), luma(&noise(4, 18)));
        let b = &a * 0.5 + &b * 0.5;
        let c = SsimConstants::default();
        let ab = ssim_luma(&a, &b, &c).unwrap();
        assert!((ab - ssim_luma(&b, &a, &c).unwrap()).abs() < 1e-12);
        assert!((ab - reference(&a, &b)).abs() < 1e-4);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        assert!(ssim(&noise(1, 12), &noise(1, 13)).is_err());
        assert!(ssim(&noise(1, 8), &noise(1, 8)).is_err());
    }
}
