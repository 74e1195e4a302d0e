use image::RgbImage;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::encoders::FeatureGeometry;
use crate::error::{Error, Result};

/// Side of the square marked around every visible click.
pub const PART_SQUARE: usize = 10;

/// One worker annotation of a part centre, in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Click {
    pub fn new(x: f64, y: f64, visible: bool) -> Self {
        Self { x, y, visible }
    }
}

/// `clicks[image][part]` lists every annotation of that part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartAnnotations {
    pub num_parts: usize,
    pub clicks: Vec<Vec<Vec<Click>>>,
}

impl PartAnnotations {
    pub fn empty(num_images: usize, num_parts: usize) -> Self {
        Self {
            num_parts,
            clicks: vec![vec![Vec::new(); num_parts]; num_images],
        }
    }

    pub(crate) fn validate(&self, images: &[RgbImage]) -> Result<()> {
        if self.clicks.len() != images.len() {
            return Err(Error::Dataset(format!(
                "part annotations cover {} images, dataset has {}",
                self.clicks.len(),
                images.len()
            )));
        }
        for (i, (per_part, img)) in self.clicks.iter().zip(images).enumerate() {
            if per_part.len() != self.num_parts {
                return Err(Error::Dataset(format!("image {i} has {} part lists", per_part.len())));
            }
            let (w, h) = (img.width() as f64, img.height() as f64);
            for c in per_part.iter().flatten().filter(|c| c.visible) {
                if !(0.0..=w).contains(&c.x) || !(0.0..=h).contains(&c.y) {
                    return Err(Error::Dataset(format!(
                        "image {i}: visible click ({}, {}) outside {w}x{h}",
                        c.x, c.y
                    )));
                }
            }
        }
        Ok(())
    }

    /// Multiplies click coordinates by per-image `(sx, sy)` factors.
    pub fn rescale(&mut self, scales: &[(f64, f64)]) {
        for (per_part, &(sx, sy)) in self.clicks.iter_mut().zip(scales) {
            for c in per_part.iter_mut().flatten() {
                c.x *= sx;
                c.y *= sy;
            }
        }
    }

    /// Image-level maps of `image` after cropping a `size`-square window whose
    /// top-left corner is `offset = (x, y)`.
    pub fn crop_maps(&self, image: usize, size: usize, offset: (usize, usize)) -> Array3<bool> {
        let shifted: Vec<Vec<Click>> = self.clicks[image]
            .iter()
            .map(|cs| {
                cs.iter()
                    .map(|c| Click::new(c.x - offset.0 as f64, c.y - offset.1 as f64, c.visible))
                    .collect()
            })
            .collect();
        build_part_maps(&shifted, size, size)
    }
}

/// Boolean `[parts, height, width]` maps: true on the union of 10-pixel
/// squares centred at every visible click, clipped to the image.
///
/// A click at pixel `c` covers `[c - 5, c + 4]` on each axis.
pub fn build_part_maps(clicks: &[Vec<Click>], height: usize, width: usize) -> Array3<bool> {
    let mut maps = Array3::from_elem((clicks.len(), height, width), false);
    let half = (PART_SQUARE / 2) as i64;
    for (p, cs) in clicks.iter().enumerate() {
        for c in cs.iter().filter(|c| c.visible) {
            let (cx, cy) = (c.x.floor() as i64, c.y.floor() as i64);
            let ys = (cy - half).max(0)..=(cy + half - 1).min(height as i64 - 1);
            for y in ys {
                let xs = (cx - half).max(0)..=(cx + half - 1).min(width as i64 - 1);
                for x in xs {
                    maps[[p, y as usize, x as usize]] = true;
                }
            }
        }
    }
    maps
}

/// Projects image-level maps onto a feature grid: a cell is true iff any
/// pixel in its receptive window is true.
pub fn project_part_maps(maps: &Array3<bool>, geometry: &FeatureGeometry) -> Result<Array3<bool>> {
    let (parts, h, w) = maps.dim();
    if h != geometry.input_size || w != geometry.input_size {
        return Err(Error::Shape(format!(
            "part maps are {h}x{w} but the feature geometry expects {0}x{0} inputs",
            geometry.input_size
        )));
    }
    let (gh, gw, _) = geometry.grid;
    let mut out = Array3::from_elem((parts, gh, gw), false);
    // summed-area table per part
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for p in 0..parts {
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += maps[[p, y, x]] as u32;
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        for gy in 0..gh {
            let (y0, y1) = geometry.window(gy);
            for gx in 0..gw {
                let (x0, x1) = geometry.window(gx);
                let at = |y: usize, x: usize| sat[y * (w + 1) + x] as i64;
                let count = at(y1 + 1, x1 + 1) - at(y0, x1 + 1) - at(y1 + 1, x0) + at(y0, x0);
                out[[p, gy, gx]] = count > 0;
            }
        }
    }
    Ok(out)
}
