//! Mutual-information analysis of frozen representations: a MINE statistics
//! network, pointwise heatmaps, the parts ratio and its correlation study.

mod heatmap;
mod ssim;
mod study;

pub use heatmap::{parts_ratio, pmi_heatmap, render_heatmap, softmax_grid, PmiHeatmap};
pub use ssim::{luma, ssim, ssim_luma, SsimConstants};
pub use study::{attribute_similarity, ratio_correlation_study, StudyInput, StudyResult, StudyRow};

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::FeatureBundle;
use crate::error::{Error, Result};
use crate::nn::{adam, Mlp, Optimizer, ParamStore};
use crate::pretraining::dv_bound;
use crate::zsl::Standardizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            steps: 2000,
            batch_size: 256,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// `T(x, y)`: the concatenated pair through two hidden layers to a scalar.
pub struct StatisticsNetwork {
    store: ParamStore,
    net: Mlp,
    sx: Standardizer,
    sy: Standardizer,
    pub trained_steps: usize,
}

fn to_tensor(x: &Array2<f32>) -> Result<Tensor> {
    let data: Vec<f32> = x.iter().copied().collect();
    Ok(Tensor::from_vec(data, x.dim(), &Device::Cpu)?)
}

impl StatisticsNetwork {
    /// Untrained network whose input standardisation is fitted on `x`, `y`.
    pub fn new(x: &Array2<f32>, y: &Array2<f32>, hidden: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed, DType::F32);
        let net = Mlp::new(&mut store, "statnet", &[x.ncols() + y.ncols(), hidden, hidden, 1])?;
        Ok(Self {
            store,
            net,
            sx: Standardizer::fit(x),
            sy: Standardizer::fit(y),
            trained_steps: 0,
        })
    }

    pub fn x_dim(&self) -> usize {
        self.sx.mean.len()
    }

    pub fn y_dim(&self) -> usize {
        self.sy.mean.len()
    }

    fn forward(&self, x: &Array2<f32>, y: &Array2<f32>) -> Result<Tensor> {
        if x.ncols() != self.x_dim() || y.ncols() != self.y_dim() || x.nrows() != y.nrows() {
            return Err(Error::Shape(format!(
                "pairs {:?} and {:?} for a network over {} + {} inputs",
                x.dim(),
                y.dim(),
                self.x_dim(),
                self.y_dim()
            )));
        }
        let xy = ndarray::concatenate(Axis(1), &[self.sx.apply(x).view(), self.sy.apply(y).view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.net.forward(&to_tensor(&xy)?)?.squeeze(1)?)
    }

    /// Scores of row-aligned pairs.
    pub fn scores(&self, x: &Array2<f32>, y: &Array2<f32>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(4096) {
            let end = (start + 4096).min(x.nrows());
            let s = ndarray::s![start..end, ..];
            let t = self.forward(&x.slice(s).to_owned(), &y.slice(s).to_owned())?;
            out.extend(t.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    /// `mean T(joint) - log mean exp T(marginal)`, marginals pairing each `x`
    /// with the `y` of an independently drawn row.
    pub fn bound<R: Rng + ?Sized>(&self, x: &Array2<f32>, y: &Array2<f32>, rng: &mut R) -> Result<f64> {
        let joint = self.scores(x, y)?;
        let idx: Vec<usize> = (0..y.nrows()).map(|_| rng.random_range(0..y.nrows())).collect();
        let marginal = self.scores(x, &y.select(Axis(0), &idx))?;
        dv_bound_values(&joint, &marginal)
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }
}

/// The bound on plain score samples, with a stabilised log-mean-exp.
pub fn dv_bound_values(joint: &[f64], marginal: &[f64]) -> Result<f64> {
    if joint.is_empty() || marginal.is_empty() {
        return Err(Error::Degenerate("bound of an empty sample".into()));
    }
    let m = marginal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lme = m + (marginal.iter().map(|v| (v - m).exp()).sum::<f64>() / marginal.len() as f64).ln();
    Ok(joint.iter().sum::<f64>() / joint.len() as f64 - lme)
}

/// Maximises the bound over row-aligned samples `(x_i, y_i)` of the joint.
pub fn train_mine(x: &Array2<f32>, y: &Array2<f32>, cfg: &MineConfig) -> Result<(StatisticsNetwork, Vec<f64>)> {
    let n = x.nrows();
    if n != y.nrows() || n < 2 {
        return Err(Error::Shape(format!("{n} x rows for {} y rows", y.nrows())));
    }
    let mut net = StatisticsNetwork::new(x, y, cfg.hidden, cfg.seed)?;
    let mut opt = adam(net.store.trainable_vars(), cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x317e);
    let bs = cfg.batch_size.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + bs > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + bs];
        cursor += bs;
        let other: Vec<usize> = (0..bs).map(|_| rng.random_range(0..n)).collect();
        let xb = x.select(Axis(0), idx);
        let joint = net.forward(&xb, &y.select(Axis(0), idx))?;
        let marginal = net.forward(&xb, &y.select(Axis(0), &other))?;
        let bound = dv_bound(&joint, &marginal)?;
        let value = bound.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                name: "mine bound".into(),
                step,
                value,
            });
        }
        history.push(value);
        opt.backward_step(&bound.neg()?)?;
    }
    net.trained_steps = cfg.steps;
    Ok((net, history))
}

/// `(G, L)` joint samples from frozen features: every local cell paired with
/// the global vector of its own image.
pub fn global_local_pairs(features: &FeatureBundle) -> Result<(Array2<f32>, Array2<f32>)> {
    features.ensure_frozen()?;
    let (h, w, c) = features.grid();
    let cells = h * w;
    let n = features.len();
    let g = features.global.ncols();
    let mut gx = Array2::zeros((n * cells, g));
    for i in 0..n {
        let row: ArrayView1<'_, f32> = features.global.row(i);
        for k in 0..cells {
            gx.row_mut(i * cells + k).assign(&row);
        }
    }
    let l = features
        .local
        .to_shape((n * cells, c))
        .map_err(|e| Error::Shape(e.to_string()))?
        .to_owned();
    Ok((gx, l))
}
