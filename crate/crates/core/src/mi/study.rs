use image::RgbImage;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{parts_ratio, pmi_heatmap, ssim, StatisticsNetwork};
use crate::encoders::FeatureBundle;
use crate::error::{Error, Result};
use crate::stats::{correlation_p_value, pearson};

/// Cosine similarity of the attribute rows of classes `a` and `b`.
pub fn attribute_similarity(attributes: &Array2<f64>, a: usize, b: usize) -> Result<f64> {
    if a >= attributes.nrows() || b >= attributes.nrows() {
        return Err(Error::Dataset(format!("no attribute row for class {}", a.max(b))));
    }
    let (ra, rb) = (attributes.row(a), attributes.row(b));
    let denom = ra.dot(&ra).sqrt() * rb.dot(&rb).sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroAttributeRow { row: if ra.dot(&ra) == 0.0 { a } else { b } });
    }
    Ok(ra.dot(&rb) / denom)
}

/// Row-aligned evaluation images with their frozen features.
pub struct StudyInput<'a> {
    pub features: &'a FeatureBundle,
    pub images: &'a [RgbImage],
    pub labels: &'a [usize],
    pub attributes: &'a Array2<f64>,
    /// Any-part union on the feature grid, `[N, H, W]`.
    pub part_union: &'a Array3<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub source: usize,
    pub target: usize,
    pub ratio: f64,
    pub sim_attr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub r_attr: f64,
    pub p_attr: f64,
    pub r_ssim: f64,
    pub p_ssim: f64,
    /// Sampled pairs dropped because the target had no part cell.
    pub skipped: usize,
}

impl StudyResult {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("source\ttarget\tratio\tsim_attr\tssim\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\t{:.6}\n", r.source, r.target, r.ratio, r.sim_attr, r.ssim));
        }
        s
    }
}

/// Parts ratio of `G(source)` against `L(target)` over uniformly drawn
/// cross-class pairs, correlated with attribute similarity and SSIM.
pub fn ratio_correlation_study<R: Rng + ?Sized>(
    net: &StatisticsNetwork,
    input: &StudyInput<'_>,
    n_pairs: usize,
    rng: &mut R,
) -> Result<StudyResult> {
    input.features.ensure_frozen()?;
    let n = input.features.len();
    if input.images.len() != n || input.labels.len() != n || input.part_union.dim().0 != n {
        return Err(Error::Shape("study inputs are not row-aligned".into()));
    }
    let first = input.labels.first().copied();
    if input.labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::Degenerate("cross-class pairs need at least two classes".into()));
    }
    let mut rows = Vec::with_capacity(n_pairs);
    let mut skipped = 0;
    let mut attempts = 0;
    while rows.len() < n_pairs {
        attempts += 1;
        if attempts > 20 * n_pairs.max(1) {
            return Err(Error::Degenerate("too few targets contain a part".into()));
        }
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if input.labels[a] == input.labels[b] {
            continue;
        }
        let union = input.part_union.index_axis(Axis(0), b).to_owned();
        if !union.iter().any(|&v| v) {
            skipped += 1;
            continue;
        }
        let map = pmi_heatmap(
            net,
            input.features.global.row(a),
            input.features.local.index_axis(Axis(0), b),
            a,
            b,
        )?;
        rows.push(StudyRow {
            source: a,
            target: b,
            ratio: parts_ratio(&map.normalized, &union)?,
            sim_attr: attribute_similarity(input.attributes, input.labels[a], input.labels[b])?,
            ssim: ssim(&input.images[a], &input.images[b])?,
        });
    }
    let ratio: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let sim: Vec<f64> = rows.iter().map(|r| r.sim_attr).collect();
    let ss: Vec<f64> = rows.iter().map(|r| r.ssim).collect();
    let r_attr = pearson(&ratio, &sim)?;
    let r_ssim = pearson(&ratio, &ss)?;
    Ok(StudyResult {
        p_attr: correlation_p_value(r_attr, rows.len())?,
        p_ssim: correlation_p_value(r_ssim, rows.len())?,
        r_attr,
        r_ssim,
        rows,
        skipped,
    })
}
