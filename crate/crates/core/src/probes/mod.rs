//! Linear part-location probes on frozen local features and the parts-F1
//! locality score.
//!
//! One logistic probe per part reads every cell of the local grid. Positive
//! cells are weighted by the inverse of their prevalence in the training maps.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{project_part_maps, PartAnnotations, Preprocessed};
use crate::encoders::{FeatureBundle, FeatureGeometry};
use crate::error::{Error, Result};
use crate::nn::{adam, Linear, Optimizer, ParamStore};
use crate::stats::pearson;
use crate::zsl::{local_cells, Standardizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    /// Cells per step.
    pub batch_size: usize,
    pub lr: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 1024,
            lr: 1e-4,
            threshold: 0.5,
            seed: 0,
        }
    }
}

/// Grid-aligned part maps of the crops in `inputs`, `[N, P, H, W]`.
pub fn project_crop_maps(
    parts: &PartAnnotations,
    images: &[usize],
    inputs: &[Preprocessed],
    crop: usize,
    geometry: &FeatureGeometry,
) -> Result<Array4<bool>> {
    if images.len() != inputs.len() {
        return Err(Error::Shape(format!("{} images for {} crops", images.len(), inputs.len())));
    }
    let (h, w, _) = geometry.grid;
    let mut out = Array4::from_elem((images.len(), parts.num_parts, h, w), false);
    for (n, (&img, p)) in images.iter().zip(inputs).enumerate() {
        let maps = project_part_maps(&parts.crop_maps(img, crop, p.offset), geometry)?;
        out.index_axis_mut(Axis(0), n).assign(&maps);
    }
    Ok(out)
}

/// Flattens `[N, P, H, W]` maps into per-cell targets `[N * H * W, P]`, with
/// cells ordered like [`local_cells`].
fn cell_targets(maps: &Array4<bool>) -> Array2<f32> {
    let (n, p, h, w) = maps.dim();
    let mut out = Array2::zeros((n * h * w, p));
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = (i * h + y) * w + x;
                for k in 0..p {
                    out[[row, k]] = maps[[i, k, y, x]] as u8 as f32;
                }
            }
        }
    }
    out
}

fn check_alignment(local: &Array4<f32>, maps: &Array4<bool>) -> Result<()> {
    let (n, h, w, _) = local.dim();
    let (mn, _, mh, mw) = maps.dim();
    if (n, h, w) != (mn, mh, mw) {
        return Err(Error::Shape(format!(
            "features are {n}x{h}x{w} but part maps are {mn}x{mh}x{mw}"
        )));
    }
    Ok(())
}

/// Independent logistic probes, one per part, over standardised channels.
#[derive(Clone, Debug)]
pub struct PartProbeSet {
    /// `[P, C]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub standardizer: Standardizer,
    pub pos_weight: Vec<f64>,
    /// Parts with no positive training cell.
    pub untrained_parts: Vec<usize>,
    pub grid: (usize, usize, usize),
    pub final_loss: f64,
}

/// `sum_p w_p y softplus(-z) + (1 - y) softplus(z)`, averaged over cells and parts.
pub fn weighted_bce(logits: &Tensor, targets: &Tensor, pos_weight: &Tensor) -> Result<Tensor> {
    let sp = (logits.relu()? + (logits.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    let sp_neg = (&sp - logits)?;
    let pos = targets.mul(&sp_neg)?.broadcast_mul(pos_weight)?;
    let neg = (targets.ones_like()? - targets)?.mul(&sp)?;
    Ok((pos + neg)?.mean_all()?)
}

fn to_tensor(x: &Array2<f32>) -> Result<Tensor> {
    let data: Vec<f32> = x.iter().copied().collect();
    Ok(Tensor::from_vec(data, x.dim(), &Device::Cpu)?)
}

/// Fits the probes on frozen `train` features against grid-aligned `maps`.
/// Only the probe parameters are optimised; the features are plain arrays.
pub fn train_part_probes(train: &FeatureBundle, maps: &Array4<bool>, cfg: &ProbeConfig) -> Result<PartProbeSet> {
    train.ensure_frozen()?;
    check_alignment(&train.local, maps)?;
    let parts = maps.dim().1;
    let cells = local_cells(&train.local);
    let targets = cell_targets(maps);
    let standardizer = Standardizer::fit(&cells);
    let xs = standardizer.apply(&cells);
    let total = cells.nrows() as f64;
    let mut untrained_parts = Vec::new();
    let pos_weight: Vec<f64> = (0..parts)
        .map(|k| {
            let pos = targets.column(k).sum() as f64;
            if pos == 0.0 {
                untrained_parts.push(k);
                1.0
            } else {
                (total - pos) / pos
            }
        })
        .collect();
    let pw = Tensor::from_vec(pos_weight.iter().map(|&v| v as f32).collect::<Vec<_>>(), parts, &Device::Cpu)?;
    let mut store = ParamStore::new(cfg.seed, DType::F32);
    let probe = Linear::new(&mut store, "probe", cells.ncols(), parts)?;
    let mut opt = adam(store.trainable_vars(), cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cells.nrows()).collect();
    let bs = cfg.batch_size.clamp(1, order.len().max(1));
    let mut cursor = order.len();
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        if cursor + bs > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + bs];
        cursor += bs;
        let xb = to_tensor(&xs.select(Axis(0), idx))?;
        let yb = to_tensor(&targets.select(Axis(0), idx))?;
        let loss = weighted_bce(&probe.forward(&xb)?, &yb, &pw)?;
        let value = loss.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                name: "part probe".into(),
                step,
                value,
            });
        }
        final_loss = value;
        opt.backward_step(&loss)?;
    }
    let weight = probe.weight().to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let weight = Array2::from_shape_vec((parts, cells.ncols()), weight.into_iter().flatten().collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let bias = match probe.bias() {
        Some(b) => Array1::from(b.to_dtype(DType::F64)?.to_vec1::<f64>()?),
        None => Array1::zeros(parts),
    };
    Ok(PartProbeSet {
        weight,
        bias,
        standardizer,
        pos_weight,
        untrained_parts,
        grid: train.grid(),
        final_loss,
    })
}

impl PartProbeSet {
    pub fn num_parts(&self) -> usize {
        self.bias.len()
    }

    /// Probabilities `[N, P, H, W]`.
    pub fn probabilities(&self, local: &Array4<f32>) -> Result<Array4<f64>> {
        let (n, h, w, c) = local.dim();
        if c != self.weight.ncols() {
            return Err(Error::Shape(format!("{c} channels, probes expect {}", self.weight.ncols())));
        }
        let xs = self.standardizer.apply(&local_cells(local)).mapv(|v| v as f64);
        let z = xs.dot(&self.weight.t()) + &self.bias;
        let p = self.num_parts();
        let mut out = Array4::zeros((n, p, h, w));
        for ((row, k), &v) in z.indexed_iter() {
            let (i, rest) = (row / (h * w), row % (h * w));
            out[[i, k, rest / w, rest % w]] = 1.0 / (1.0 + (-v).exp());
        }
        Ok(out)
    }

    pub fn predict(&self, local: &Array4<f32>, threshold: f64) -> Result<Array4<bool>> {
        Ok(self.probabilities(local)?.mapv(|p| p >= threshold))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartsF1 {
    /// Unweighted mean over parts.
    pub mean: f64,
    pub per_part: Vec<f64>,
    /// Parts with no positive cell in the evaluated maps; their F1 is 0.
    pub empty_parts: Vec<usize>,
}

impl PartsF1 {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("part\tf1\tempty\n");
        for (k, f) in self.per_part.iter().enumerate() {
            s.push_str(&format!("{k}\t{f:.6}\t{}\n", self.empty_parts.contains(&k)));
        }
        s
    }
}

/// F1 per part over every (image, location) pair, then the mean over parts.
pub fn f1_from_predictions(pred: &Array4<bool>, truth: &Array4<bool>) -> Result<PartsF1> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!("{:?} predictions vs {:?} maps", pred.dim(), truth.dim())));
    }
    let parts = truth.dim().1;
    if parts == 0 {
        return Err(Error::Degenerate("no parts to score".into()));
    }
    let mut per_part = Vec::with_capacity(parts);
    let mut empty_parts = Vec::new();
    for k in 0..parts {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&p, &t) in pred.index_axis(Axis(1), k).iter().zip(truth.index_axis(Axis(1), k)) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fn_ == 0 {
            empty_parts.push(k);
            per_part.push(0.0);
        } else {
            per_part.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        }
    }
    let mean = per_part.iter().sum::<f64>() / parts as f64;
    Ok(PartsF1 {
        mean,
        per_part,
        empty_parts,
    })
}

/// Parts-F1 of `probes` on held-out features.
pub fn parts_f1(probes: &PartProbeSet, test: &FeatureBundle, maps: &Array4<bool>, threshold: f64) -> Result<PartsF1> {
    test.ensure_frozen()?;
    check_alignment(&test.local, maps)?;
    if maps.dim().1 != probes.num_parts() {
        return Err(Error::Shape(format!("{} maps for {} probes", maps.dim().1, probes.num_parts())));
    }
    f1_from_predictions(&probes.predict(&test.local, threshold)?, maps)
}

/// Pearson correlation of `(parts_f1, zsl_top1)` pairs across model variants.
pub fn locality_zsl_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    let (f1, acc): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    pearson(&f1, &acc)
}

/// Union over parts of `[N, P, H, W]` maps, `[N, H, W]`.
pub fn any_part(maps: &Array4<bool>) -> Array3<bool> {
    let (n, p, h, w) = maps.dim();
    Array3::from_shape_fn((n, h, w), |(i, y, x)| (0..p).any(|k| maps[[i, k, y, x]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::FeatureBundle;

    fn geometry(grid: usize, c: usize) -> FeatureGeometry {
        FeatureGeometry {
            grid: (grid, grid, c),
            receptive_field: 1,
            jump: 1,
            first: 0,
            input_size: grid,
        }
    }

    #[test]
    fn constant_negative_predictor_scores_zero() {
        let mut truth = Array4::from_elem((2, 2, 3, 3), false);
        truth[[0, 0, 1, 1]] = true;
        let pred = Array4::from_elem(truth.dim(), false);
        let f = f1_from_predictions(&pred, &truth).unwrap();
        assert_eq!(f.per_part, vec![0.0, 0.0]);
        assert_eq!(f.empty_parts, vec![1]);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut truth = Array4::from_elem((1, 1, 2, 2), false);
        truth[[0, 0, 0, 1]] = true;
        let f = f1_from_predictions(&truth.clone(), &truth).unwrap();
        assert_eq!(f.mean, 1.0);
    }

    #[test]
    fn f1_counts_by_hand() {
        // tp 1, fp 1, fn 2
        let truth = Array4::from_shape_vec((1, 1, 2, 2), vec![true, true, true, false]).unwrap();
        let pred = Array4::from_shape_vec((1, 1, 2, 2), vec![true, false, false, true]).unwrap();
        let f = f1_from_predictions(&pred, &truth).unwrap();
        assert!((f.mean - 2.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn planted_channel_is_recovered() {
        let (n, g) = (24, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut maps = Array4::from_elem((n, 1, g, g), false);
        let mut local = Array4::<f32>::zeros((n, g, g, 3));
        for i in 0..n {
            for y in 0..g {
                for x in 0..g {
                    let on = rand::Rng::random_bool(&mut rng, 0.2);
                    maps[[i, 0, y, x]] = on;
                    local[[i, y, x, 0]] = on as u8 as f32;
                    local[[i, y, x, 1]] = rand::Rng::random::<f32>(&mut rng);
                    local[[i, y, x, 2]] = rand::Rng::random::<f32>(&mut rng);
                }
            }
        }
        let geo = geometry(g, 3);
        let global = Array2::zeros((n, 1));
        let train = FeatureBundle::fixture(global, local, geo).unwrap();
        let cfg = ProbeConfig {
            steps: 400,
            batch_size: 128,
            lr: 1e-2,
            ..Default::default()
        };
        let probes = train_part_probes(&train, &maps, &cfg).unwrap();
        let f = parts_f1(&probes, &train, &maps, 0.5).unwrap();
        assert!(f.mean > 0.99, "{f:?}");
    }

    #[test]
    fn misaligned_maps_are_rejected() {
        let train = FeatureBundle::fixture(
            Array2::zeros((2, 1)),
            Array4::zeros((2, 3, 3, 2)),
            geometry(3, 2),
        )
        .unwrap();
        let maps = Array4::from_elem((2, 1, 4, 4), false);
        assert!(train_part_probes(&train, &maps, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn correlation_of_identical_series() {
        let pairs = [(0.1, 0.1), (0.4, 0.4), (0.3, 0.3)];
        assert!((locality_zsl_correlation(&pairs).unwrap() - 1.0).abs() < 1e-12);
    }
}
