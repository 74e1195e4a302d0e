use candle_core::{DType, Device, Tensor};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::FeatureSource;
use crate::error::{Error, Result};
use crate::nn::{adam, cross_entropy, Mlp, Optimizer, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtoConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            hidden: 512,
            steps: 1000,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Image and attribute embedders into a shared space; classes are scored by
/// negative squared Euclidean distance to their embedded attribute vector.
pub struct ProtoHead {
    image: Mlp,
    attribute: Mlp,
}

impl ProtoHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        attr_dim: usize,
        hidden: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            image: Mlp::new(store, &format!("{name}.image"), &[input_dim, hidden, embed_dim])?,
            attribute: Mlp::new(store, &format!("{name}.attribute"), &[attr_dim, hidden, embed_dim])?,
        })
    }

    /// `-||f(x_n) - g(a_k)||^2` for `x: [N, D]`, `attrs: [K, A]`.
    pub fn logits(&self, x: &Tensor, attrs: &Tensor) -> Result<Tensor> {
        let e = self.image.forward(x)?;
        let p = self.attribute.forward(attrs)?;
        Ok(squared_distances(&e, &p)?.neg()?)
    }
}

/// `[N, d] x [K, d] -> [N, K]` squared Euclidean distances.
pub fn squared_distances(x: &Tensor, p: &Tensor) -> Result<Tensor> {
    let x2 = x.sqr()?.sum_keepdim(1)?;
    let p2 = p.sqr()?.sum_keepdim(1)?.t()?;
    let cross = x.matmul(&p.t()?)?;
    Ok(x2.broadcast_add(&p2)?.broadcast_sub(&(cross * 2.0)?)?)
}

/// Per-dimension standardisation fitted on training features.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f32>,
    pub std: Array1<f32>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f32>) -> Self {
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let std = x
            .std_axis(ndarray::Axis(0), 0.0)
            .mapv(|s| if s > 1e-6 { s } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, x: &Array2<f32>) -> Array2<f32> {
        (x - &self.mean) / &self.std
    }
}

pub struct ProtoModel {
    store: ParamStore,
    head: ProtoHead,
    standardizer: Standardizer,
    pub config: ProtoConfig,
    pub final_loss: f64,
}

fn to_tensor(x: &Array2<f32>) -> Result<Tensor> {
    let (n, d) = x.dim();
    let data: Vec<f32> = x.iter().copied().collect();
    Ok(Tensor::from_vec(data, (n, d), &Device::Cpu)?)
}

fn attr_tensor(attributes: &Array2<f64>, classes: &[usize]) -> Result<Tensor> {
    let rows = attributes.select(ndarray::Axis(0), classes).mapv(|v| v as f32);
    to_tensor(&rows)
}

/// Trains the embedders on frozen features `x` (one row per image) with
/// absolute class `labels`; each step's softmax runs over the classes present
/// in its batch.
pub fn fit_protonet(
    x: &Array2<f32>,
    source: &FeatureSource,
    labels: &[usize],
    attributes: &Array2<f64>,
    cfg: &ProtoConfig,
) -> Result<ProtoModel> {
    if *source == FeatureSource::Live {
        return Err(Error::Zfs("prototypical network fitted on features of a trainable encoder".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", x.nrows(), labels.len())));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate("prototypical network needs at least two train classes".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= attributes.nrows()) {
        return Err(Error::Dataset(format!("no attribute row for class {c}")));
    }
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.apply(x);
    let mut store = ParamStore::new(cfg.seed, DType::F32);
    let head = ProtoHead::new(&mut store, "proto", x.ncols(), attributes.ncols(), cfg.hidden, cfg.embed_dim)?;
    let mut opt = adam(store.trainable_vars(), cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut cursor = order.len();
    let bs = cfg.batch_size.max(2).min(order.len());
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        if cursor + bs > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + bs];
        cursor += bs;
        let mut present: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        present.sort_unstable();
        present.dedup();
        let target: Vec<usize> = idx
            .iter()
            .map(|&i| present.binary_search(&labels[i]).expect("present"))
            .collect();
        let xb = to_tensor(&xs.select(ndarray::Axis(0), idx))?;
        let logits = head.logits(&xb, &attr_tensor(attributes, &present)?)?;
        let loss = cross_entropy(&logits, &target)?;
        let value = loss.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                name: "protonet".into(),
                step,
                value,
            });
        }
        final_loss = value;
        opt.backward_step(&loss)?;
    }
    Ok(ProtoModel {
        store,
        head,
        standardizer,
        config: cfg.clone(),
        final_loss,
    })
}

impl ProtoModel {
    pub fn input_dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    /// Squared distances `[N, K]` from every row of `x` to the prototypes of
    /// `classes`.
    pub fn distances(&self, x: &Array2<f32>, attributes: &Array2<f64>, classes: &[usize]) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} dims, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= attributes.nrows()) {
            return Err(Error::Dataset(format!("no attribute row for class {c}")));
        }
        let xs = self.standardizer.apply(x);
        let attrs = attr_tensor(attributes, classes)?;
        let mut out = Array2::zeros((x.nrows(), classes.len()));
        for start in (0..x.nrows()).step_by(1024) {
            let end = (start + 1024).min(x.nrows());
            let xb = to_tensor(&xs.slice(ndarray::s![start..end, ..]).to_owned())?;
            let d = self.head.logits(&xb, &attrs)?.neg()?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            for (r, row) in d.into_iter().enumerate() {
                for (k, v) in row.into_iter().enumerate() {
                    out[[start + r, k]] = v;
                }
            }
        }
        Ok(out)
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_distance_matches_direct() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, -1.0, 0.5], (2, 2), &Device::Cpu).unwrap();
        let p = Tensor::from_vec(vec![0.0f64, 0.0, 3.0, -1.0, 1.0, 1.0], (3, 2), &Device::Cpu).unwrap();
        let d = squared_distances(&x, &p).unwrap().to_vec2::<f64>().unwrap();
        let xs: [[f64; 2]; 2] = [[1.0, 2.0], [-1.0, 0.5]];
        let ps = [[0.0, 0.0], [3.0, -1.0], [1.0, 1.0]];
        for i in 0..2 {
            for k in 0..3 {
                let want: f64 = (0..2).map(|j| (xs[i][j] - ps[k][j]).powi(2)).sum();
                assert!((d[i][k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = ndarray::array![[1.0f32, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(&x);
        let y = s.apply(&x);
        assert_eq!(y, ndarray::array![[-1.0f32, 0.0], [1.0, 0.0]]);
    }
}
