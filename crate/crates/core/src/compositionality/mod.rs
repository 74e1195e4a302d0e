//! Tree reconstruction error of frozen features against binary attribute
//! descriptions, and its ratio against random attribute matrices.
//!
//! Each attribute owns a learnable vector; a datapoint's composition is the
//! sum of the vectors of its active attributes, compared to the feature by
//! cosine distance.

use candle_core::{DType, Device, Tensor, Var};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam, Optimizer};
use crate::stats::pearson;

const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Binarized {
    pub matrix: Array2<bool>,
    /// Columns constant over the reference rows; kept all-false.
    pub constant: Vec<usize>,
}

/// Thresholds every column at its mean over `reference_rows` (strictly
/// greater is true).
pub fn binarize_attributes(matrix: &Array2<f64>, reference_rows: &[usize]) -> Result<Binarized> {
    if reference_rows.is_empty() {
        return Err(Error::Degenerate("no reference rows for binarisation".into()));
    }
    if let Some(&r) = reference_rows.iter().find(|&&r| r >= matrix.nrows()) {
        return Err(Error::Dataset(format!("reference row {r} out of range")));
    }
    let reference = matrix.select(Axis(0), reference_rows);
    let mut out = Array2::from_elem(matrix.dim(), false);
    let mut constant = Vec::new();
    for (j, col) in reference.columns().into_iter().enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            constant.push(j);
            continue;
        }
        let mean = col.mean().unwrap_or(0.0);
        for i in 0..matrix.nrows() {
            out[[i, j]] = matrix[[i, j]] > mean;
        }
    }
    Ok(Binarized { matrix: out, constant })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreConfig {
    pub max_steps: usize,
    pub lr: f64,
    pub init_std: f64,
    /// Steps between convergence checks.
    pub window: usize,
    /// Stop once the best objective improves by less than this fraction
    /// over one window.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for TreConfig {
    fn default() -> Self {
        Self {
            max_steps: 5000,
            lr: 1e-2,
            init_std: 0.1,
            window: 100,
            rel_tol: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreModel {
    /// `[A, D]`
    pub eta: Array2<f64>,
    pub initial_objective: f64,
    pub objective: f64,
    pub steps: usize,
    /// Datapoints without an active attribute, left out of the fit.
    pub excluded: usize,
}

/// Per-datapoint attribute sets `[N, A]` from class-level rows.
pub fn datapoint_attributes(class_attrs: &Array2<bool>, labels: &[usize]) -> Result<Array2<bool>> {
    if let Some(&l) = labels.iter().find(|&&l| l >= class_attrs.nrows()) {
        return Err(Error::Dataset(format!("no attribute row for class {l}")));
    }
    Ok(class_attrs.select(Axis(0), labels))
}

fn nonempty_rows(d: &Array2<bool>) -> Vec<usize> {
    (0..d.nrows()).filter(|&i| d.row(i).iter().any(|&v| v)).collect()
}

fn check(features: &Array2<f64>, d: &Array2<bool>) -> Result<()> {
    if features.nrows() != d.nrows() {
        return Err(Error::Shape(format!("{} features for {} attribute sets", features.nrows(), d.nrows())));
    }
    Ok(())
}

fn tensor(x: &Array2<f64>) -> Result<Tensor> {
    Ok(Tensor::from_vec(x.iter().copied().collect::<Vec<_>>(), x.dim(), &Device::Cpu)?)
}

/// Mean cosine distance as a differentiable function of `eta`.
fn objective(features: &Tensor, mask: &Tensor, eta: &Tensor) -> Result<Tensor> {
    let comp = mask.matmul(eta)?;
    let dot = (features * &comp)?.sum(1)?;
    let nf = (features.sqr()?.sum(1)? + NORM_EPS)?.sqrt()?;
    let nc = (comp.sqr()?.sum(1)? + NORM_EPS)?.sqrt()?;
    let cos = (dot / (nf * nc)?)?;
    Ok((cos.neg()? + 1.0)?.mean_all()?)
}

fn prepare(features: &Array2<f64>, d: &Array2<bool>) -> Result<(Tensor, Tensor, usize)> {
    check(features, d)?;
    let rows = nonempty_rows(d);
    if rows.is_empty() {
        return Err(Error::Degenerate("no datapoint has an active attribute".into()));
    }
    let f = tensor(&features.select(Axis(0), &rows))?;
    let m = tensor(&d.select(Axis(0), &rows).mapv(|b| b as u8 as f64))?;
    Ok((f, m, d.nrows() - rows.len()))
}

/// Objective and its gradient with respect to `eta`.
pub fn tre_objective_grad(features: &Array2<f64>, d: &Array2<bool>, eta: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let (f, m, _) = prepare(features, d)?;
    let var = Var::from_tensor(&tensor(eta)?)?;
    let loss = objective(&f, &m, var.as_tensor())?;
    let grads = loss.backward()?;
    let g = grads
        .get(var.as_tensor())
        .ok_or_else(|| Error::Degenerate("objective does not depend on eta".into()))?;
    let g = Array2::from_shape_vec(eta.dim(), g.flatten_all()?.to_vec1::<f64>()?).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((loss.to_scalar::<f64>()?, g))
}

/// Fits the attribute vectors on `features` by Adam on the mean cosine
/// distance and returns the best vectors seen.
pub fn fit_tre(features: &Array2<f64>, d: &Array2<bool>, cfg: &TreConfig) -> Result<TreModel> {
    let (f, m, excluded) = prepare(features, d)?;
    let (a, dim) = (d.ncols(), features.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let init: Vec<f64> = (0..a * dim).map(|_| normal.sample(&mut rng)).collect();
    let var = Var::from_tensor(&Tensor::from_vec(init, (a, dim), &Device::Cpu)?)?;
    let mut opt = adam(vec![var.clone()], cfg.lr)?;
    let mut best = objective(&f, &m, var.as_tensor())?.to_scalar::<f64>()?;
    let initial_objective = best;
    let mut best_eta = var.as_tensor().copy()?;
    let mut window_start = best;
    let mut steps = 0;
    for step in 0..cfg.max_steps {
        let loss = objective(&f, &m, var.as_tensor())?;
        let value = loss.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                name: "tre".into(),
                step,
                value,
            });
        }
        if value < best {
            best = value;
            best_eta = var.as_tensor().copy()?;
        }
        opt.backward_step(&loss)?;
        steps = step + 1;
        if steps % cfg.window.max(1) == 0 {
            if window_start - best < cfg.rel_tol * window_start.abs() {
                break;
            }
            window_start = best;
        }
    }
    let last = objective(&f, &m, var.as_tensor())?.to_scalar::<f64>()?;
    if last < best {
        best = last;
        best_eta = var.as_tensor().copy()?;
    }
    let eta = Array2::from_shape_vec((a, dim), best_eta.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(TreModel {
        eta,
        initial_objective,
        objective: best,
        steps,
        excluded,
    })
}

/// Mean cosine distance between features and their compositions under `eta`,
/// over datapoints with at least one active attribute.
pub fn tre(eta: &Array2<f64>, features: &Array2<f64>, d: &Array2<bool>) -> Result<f64> {
    check(features, d)?;
    if eta.dim() != (d.ncols(), features.ncols()) {
        return Err(Error::Shape(format!("eta {:?} for {} attributes of {} dims", eta.dim(), d.ncols(), features.ncols())));
    }
    let rows = nonempty_rows(d);
    if rows.is_empty() {
        return Err(Error::Degenerate("no datapoint has an active attribute".into()));
    }
    let mut total = 0.0;
    for &i in &rows {
        let mut comp = ndarray::Array1::<f64>::zeros(features.ncols());
        for (k, _) in d.row(i).iter().enumerate().filter(|(_, &b)| b) {
            comp += &eta.row(k);
        }
        let f = features.row(i);
        let nf = (f.dot(&f) + NORM_EPS).sqrt();
        let nc = (comp.dot(&comp) + NORM_EPS).sqrt();
        total += 1.0 - f.dot(&comp) / (nf * nc);
    }
    Ok(total / rows.len() as f64)
}

/// Column-wise permutation of a class-attribute matrix: every attribute
/// keeps its number of active classes.
pub fn random_attribute_matrix(attrs: &Array2<bool>, seed: u64) -> Array2<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = attrs.clone();
    for mut col in out.columns_mut() {
        let mut v: Vec<bool> = col.to_vec();
        v.shuffle(&mut rng);
        for (dst, src) in col.iter_mut().zip(v) {
            *dst = src;
        }
    }
    out
}

/// Labelled features of both splits.
pub struct TreData<'a> {
    pub train: &'a Array2<f64>,
    pub train_labels: &'a [usize],
    pub test: &'a Array2<f64>,
    pub test_labels: &'a [usize],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreReport {
    pub tre_train: f64,
    pub tre_test: f64,
    /// Mean over random draws.
    pub random_tre_train: f64,
    pub random_tre_test: f64,
    /// Test-feature ratio.
    pub ratio: f64,
    pub ratio_train: f64,
    pub random_matrix_seeds: Vec<u64>,
}

fn tre_pair(data: &TreData<'_>, attrs: &Array2<bool>, cfg: &TreConfig) -> Result<(f64, f64)> {
    let dtr = datapoint_attributes(attrs, data.train_labels)?;
    let dte = datapoint_attributes(attrs, data.test_labels)?;
    let model = fit_tre(data.train, &dtr, cfg)?;
    Ok((tre(&model.eta, data.train, &dtr)?, tre(&model.eta, data.test, &dte)?))
}

/// TRE under `attrs` divided by the mean TRE under each of `random`, every
/// fit made on the train split with the same configuration.
pub fn tre_ratio_against(
    data: &TreData<'_>,
    attrs: &Array2<bool>,
    random: &[Array2<bool>],
    cfg: &TreConfig,
) -> Result<TreReport> {
    if random.is_empty() {
        return Err(Error::Config("no random attribute matrix".into()));
    }
    let (tre_train, tre_test) = tre_pair(data, attrs, cfg)?;
    let mut rtr = 0.0;
    let mut rte = 0.0;
    for r in random {
        let (a, b) = tre_pair(data, r, cfg)?;
        rtr += a / random.len() as f64;
        rte += b / random.len() as f64;
    }
    if rte.abs() < 1e-12 || rtr.abs() < 1e-12 {
        return Err(Error::Degenerate("random-matrix TRE is zero; ratio undefined".into()));
    }
    Ok(TreReport {
        tre_train,
        tre_test,
        random_tre_train: rtr,
        random_tre_test: rte,
        ratio: tre_test / rte,
        ratio_train: tre_train / rtr,
        random_matrix_seeds: Vec::new(),
    })
}

/// Ratio against `draws` density-matched random matrices seeded from `seed`.
pub fn tre_ratio(data: &TreData<'_>, attrs: &Array2<bool>, cfg: &TreConfig, draws: usize, seed: u64) -> Result<TreReport> {
    let seeds: Vec<u64> = (0..draws as u64).map(|k| seed.wrapping_add(k)).collect();
    let random: Vec<Array2<bool>> = seeds.iter().map(|&s| random_attribute_matrix(attrs, s)).collect();
    let mut report = tre_ratio_against(data, attrs, &random, cfg)?;
    report.random_matrix_seeds = seeds;
    Ok(report)
}

/// Pearson correlation of `(tre_ratio, zsl_top1)` pairs across variants.
pub fn tre_zsl_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    let (r, a): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    pearson(&r, &a)
}
