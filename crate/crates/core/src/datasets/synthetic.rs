//! Seeded compositional image dataset with known ground truth.
//!
//! Every attribute is a glyph (shape + colour) drawn inside its own slot of a
//! regular grid, with jittered position. A class is a binary attribute vector
//! and its images show exactly the glyphs of its true attributes over a
//! random striped background. Part annotations are the glyph centres.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::parts::{Click, PartAnnotations};
use super::{DatasetBundle, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_attributes: usize,
    pub num_train_classes: usize,
    pub images_per_class: usize,
    pub image_size: usize,
    pub glyph_size: usize,
    /// Inclusive range of true attributes per class.
    pub min_active: usize,
    pub max_active: usize,
    /// Minimum Hamming distance between any two class vectors.
    pub min_hamming: usize,
    /// Amplitude of the background stripes (pixel range is `[0, 1]`).
    pub stripe_amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 40,
            num_attributes: 12,
            num_train_classes: 30,
            images_per_class: 24,
            image_size: 64,
            glyph_size: 10,
            min_active: 3,
            max_active: 6,
            min_hamming: 2,
            stripe_amplitude: 0.2,
            noise_std: 0.03,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Square,
    Disk,
    Triangle,
    Cross,
    Ring,
    Diamond,
}

const SHAPES: [Shape; 6] = [
    Shape::Square,
    Shape::Disk,
    Shape::Triangle,
    Shape::Cross,
    Shape::Ring,
    Shape::Diamond,
];

const PALETTE: [[f64; 3]; 6] = [
    [0.95, 0.10, 0.10],
    [0.10, 0.85, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.90, 0.10],
    [0.90, 0.10, 0.90],
    [0.05, 0.90, 0.90],
];

impl Shape {
    /// Membership test in glyph-local coordinates `u, v` in `[-1, 1]`.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Disk => u * u + v * v <= 0.9,
            Shape::Triangle => v >= -0.9 && v <= 0.9 && u.abs() <= (v + 0.9) / 1.8 * 0.95,
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
            Shape::Ring => {
                let r = u * u + v * v;
                (0.3..=0.95).contains(&r)
            }
            Shape::Diamond => u.abs() + v.abs() <= 1.0,
        }
    }
}

/// Glyph of attribute `i`: distinct (shape, colour) pair for `i < 36`.
fn glyph(i: usize) -> (Shape, [f64; 3]) {
    (SHAPES[i % 6], PALETTE[(i + i / 6) % 6])
}

struct Layout {
    cols: usize,
    cell_w: usize,
    cell_h: usize,
}

impl SyntheticSpec {
    fn layout(&self) -> Result<Layout> {
        if self.num_attributes < 4 {
            return Err(Error::Config("synthetic data needs at least 4 attributes".into()));
        }
        if self.num_attributes > SHAPES.len() * PALETTE.len() {
            return Err(Error::Config(format!(
                "at most {} distinct glyphs are available",
                SHAPES.len() * PALETTE.len()
            )));
        }
        let cols = (self.num_attributes as f64).sqrt().ceil() as usize;
        let rows = self.num_attributes.div_ceil(cols);
        let (cell_w, cell_h) = (self.image_size / cols, self.image_size / rows);
        if self.glyph_size == 0 || self.glyph_size > cell_w.min(cell_h) {
            return Err(Error::Config(format!(
                "{} glyphs of side {} do not fit a {}px canvas ({}x{} slots)",
                self.num_attributes, self.glyph_size, self.image_size, cell_w, cell_h
            )));
        }
        Ok(Layout { cols, cell_w, cell_h })
    }

    fn validate(&self) -> Result<()> {
        self.layout()?;
        if self.num_train_classes == 0 || self.num_train_classes >= self.num_classes {
            return Err(Error::Config("need at least one train and one test class".into()));
        }
        if self.min_active == 0 || self.min_active > self.max_active || self.max_active > self.num_attributes {
            return Err(Error::Config("invalid active-attribute range".into()));
        }
        Ok(())
    }

    /// Binary class-attribute matrix and the class split, both determined by
    /// the seed.
    pub fn class_attributes(&self) -> Result<(Array2<bool>, Split)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let a = self.num_attributes;
        let mut rows: Vec<Vec<bool>> = Vec::with_capacity(self.num_classes);
        let mut tries = 0usize;
        while rows.len() < self.num_classes {
            tries += 1;
            if tries > 100_000 {
                return Err(Error::Config(format!(
                    "cannot draw {} classes with min Hamming distance {}",
                    self.num_classes, self.min_hamming
                )));
            }
            let k = rng.random_range(self.min_active..=self.max_active);
            let mut idx: Vec<usize> = (0..a).collect();
            idx.shuffle(&mut rng);
            let mut row = vec![false; a];
            for &i in &idx[..k] {
                row[i] = true;
            }
            let far = rows
                .iter()
                .all(|r| r.iter().zip(&row).filter(|(x, y)| x != y).count() >= self.min_hamming.max(1));
            if far {
                rows.push(row);
            }
        }
        // every attribute must be both present and absent among train classes
        let mut order: Vec<usize> = (0..self.num_classes).collect();
        for attempt in 0.. {
            if attempt > 10_000 {
                return Err(Error::Config("no split covers every attribute in training".into()));
            }
            order.shuffle(&mut rng);
            let train = &order[..self.num_train_classes];
            let covered = (0..a).all(|j| {
                let on = train.iter().filter(|&&c| rows[c][j]).count();
                on > 0 && on < train.len()
            });
            if covered {
                break;
            }
        }
        let split = Split::new(
            order[..self.num_train_classes].to_vec(),
            order[self.num_train_classes..].to_vec(),
        )?;
        let m = Array2::from_shape_fn((self.num_classes, a), |(c, j)| rows[c][j]);
        Ok((m, split))
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    let layout = spec.layout()?;
    let (matrix, split) = spec.class_attributes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9e37_79b9));
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let s = spec.image_size;
    let g = spec.glyph_size as f64;

    let n = spec.num_classes * spec.images_per_class;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut parts = PartAnnotations::empty(n, spec.num_attributes);

    for class in 0..spec.num_classes {
        for _ in 0..spec.images_per_class {
            let idx = images.len();
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(2.0..6.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let (ct, st) = (theta.cos(), theta.sin());
            let mut canvas = vec![[0f64; 3]; s * s];
            for y in 0..s {
                for x in 0..s {
                    let t = (x as f64 * ct + y as f64 * st) / s as f64;
                    let stripe = spec.stripe_amplitude * (std::f64::consts::TAU * freq * t + phase).sin();
                    for ch in 0..3 {
                        canvas[y * s + x][ch] = base[ch] + stripe + noise.sample(&mut rng);
                    }
                }
            }
            for attr in (0..spec.num_attributes).filter(|&j| matrix[[class, j]]) {
                let (shape, color) = glyph(attr);
                let (col, row) = (attr % layout.cols, attr / layout.cols);
                let jitter_x = (layout.cell_w as f64 - g).max(0.0);
                let jitter_y = (layout.cell_h as f64 - g).max(0.0);
                let x0 = (col * layout.cell_w) as f64 + rng.random_range(0.0..=jitter_x);
                let y0 = (row * layout.cell_h) as f64 + rng.random_range(0.0..=jitter_y);
                let (cx, cy) = (x0 + g / 2.0, y0 + g / 2.0);
                for py in (y0.floor() as usize)..((y0 + g).ceil() as usize).min(s) {
                    for px in (x0.floor() as usize)..((x0 + g).ceil() as usize).min(s) {
                        let u = (px as f64 + 0.5 - cx) / (g / 2.0);
                        let v = (py as f64 + 0.5 - cy) / (g / 2.0);
                        if shape.contains(u, v) {
                            canvas[py * s + px] = color;
                        }
                    }
                }
                parts.clicks[idx][attr].push(Click::new(cx, cy, true));
            }
            let img = RgbImage::from_fn(s as u32, s as u32, |x, y| {
                let p = canvas[y as usize * s + x as usize];
                Rgb(std::array::from_fn(|c| (p[c].clamp(0.0, 1.0) * 255.0).round() as u8))
            });
            images.push(img);
            labels.push(class);
        }
    }

    let raw = matrix.mapv(|b| if b { 1.0 } else { 0.0 });
    DatasetBundle::new(format!("synthetic-{}", spec.seed), images, labels, raw, split, Some(parts))
}
