use candle_core::{DType, Tensor};
use ndarray::{Array2, Array4, ArrayView1};

use super::geometry::{receptive_field, FeatureGeometry};
use super::spec::{EncoderSpec, PoolSpec, Tap};
use crate::datasets::Preprocessed;
use crate::error::{Error, Result};
use crate::nn::{max_pool2d, BatchNorm, Conv2d, Linear, ParamStore};

struct Block {
    conv: Conv2d,
    bn: Option<BatchNorm>,
    pool: Option<PoolSpec>,
}

/// Convolutional trunk plus fully connected head producing the global vector.
pub struct Encoder {
    spec: EncoderSpec,
    seed: u64,
    store: ParamStore,
    blocks: Vec<Block>,
    head: Vec<(Linear, BatchNorm)>,
}

/// Tensors from one forward pass.
pub struct EncoderOutput {
    /// `[N, global_dim]`
    pub global: Tensor,
    /// `[N, C, H, W]` at the spec's local tap.
    pub local: Tensor,
    /// Extra taps in the order they were requested, `[N, C, H, W]` each.
    pub taps: Vec<Tensor>,
}

impl Encoder {
    pub fn new(spec: EncoderSpec, seed: u64, dtype: DType) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(seed, dtype);
        let mut blocks = Vec::with_capacity(spec.conv.len());
        let mut in_ch = spec.input_channels;
        for (i, c) in spec.conv.iter().enumerate() {
            let name = format!("conv{i}");
            let conv = Conv2d::new(&mut store, &name, in_ch, c.out_channels, c.kernel, c.stride, c.padding)?;
            let bn = if c.batch_norm {
                Some(BatchNorm::new(&mut store, &format!("{name}.bn"), c.out_channels)?)
            } else {
                None
            };
            blocks.push(Block { conv, bn, pool: c.pool });
            in_ch = c.out_channels;
        }
        let mut head = Vec::new();
        let mut in_dim = spec.flatten_dim()?;
        for (i, &out) in spec.fc_hidden.iter().chain(std::iter::once(&spec.global_dim)).enumerate() {
            let name = format!("fc{i}");
            let lin = Linear::new(&mut store, &name, in_dim, out)?;
            let bn = BatchNorm::new(&mut store, &format!("{name}.bn"), out)?;
            head.push((lin, bn));
            in_dim = out;
        }
        Ok(Self {
            spec,
            seed,
            store,
            blocks,
            head,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.spec.input_size;
        match x.dims() {
            [_, c, h, w] if *c == self.spec.input_channels && *h == s && *w == s => Ok(()),
            d => Err(Error::Shape(format!(
                "encoder expects [N, {}, {s}, {s}], got {d:?}",
                self.spec.input_channels
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<EncoderOutput> {
        self.forward_with_taps(x, train, &[])
    }

    /// Forward pass that also returns the maps at `taps`.
    pub fn forward_with_taps(&self, x: &Tensor, train: bool, taps: &[Tap]) -> Result<EncoderOutput> {
        self.check_input(x)?;
        for t in taps {
            self.spec.tap_shape(*t)?;
        }
        let mut extra: Vec<Option<Tensor>> = vec![None; taps.len()];
        let mut local = None;
        let mut h = x.to_dtype(self.dtype())?;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.conv.forward(&h)?;
            if let Some(bn) = &b.bn {
                h = bn.forward(&h, train)?;
            }
            h = h.relu()?;
            for (slot, t) in extra.iter_mut().zip(taps) {
                if *t == Tap::PrePool(i) {
                    *slot = Some(h.clone());
                }
            }
            if let Some(p) = b.pool {
                h = max_pool2d(&h, p.kernel, p.stride)?;
            }
            for (slot, t) in extra.iter_mut().zip(taps) {
                if *t == Tap::Block(i) {
                    *slot = Some(h.clone());
                }
            }
            if i == self.spec.local_tap {
                local = Some(h.clone());
            }
        }
        let mut g = h.flatten_from(1)?;
        for (lin, bn) in &self.head {
            g = bn.forward(&lin.forward(&g)?, train)?.relu()?;
        }
        Ok(EncoderOutput {
            global: g,
            local: local.expect("local tap validated"),
            taps: extra.into_iter().map(|t| t.expect("tap validated")).collect(),
        })
    }

    /// Detach this encoder from any further training.
    pub fn freeze(self) -> Result<FrozenEncoder> {
        let checksum = self.store.checksum()?;
        Ok(FrozenEncoder { inner: self, checksum })
    }
}

/// Where a [`FeatureBundle`] came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    /// Produced by a frozen encoder whose parameters hash to `checksum`.
    Frozen { checksum: String },
    /// Hand-built features (tests, planted fixtures).
    Fixture,
    /// Produced by an encoder that is still being trained.
    Live,
}

/// Detached global and local features for a set of images.
#[derive(Clone, Debug)]
pub struct FeatureBundle {
    /// `[N, D]`
    pub global: Array2<f32>,
    /// `[N, H, W, C]`
    pub local: Array4<f32>,
    pub geometry: FeatureGeometry,
    pub source: FeatureSource,
}

impl FeatureBundle {
    pub fn fixture(global: Array2<f32>, local: Array4<f32>, geometry: FeatureGeometry) -> Result<Self> {
        if global.nrows() != local.shape()[0] {
            return Err(Error::Shape(format!(
                "{} global rows but {} local maps",
                global.nrows(),
                local.shape()[0]
            )));
        }
        Ok(Self {
            global,
            local,
            geometry,
            source: FeatureSource::Fixture,
        })
    }

    pub fn len(&self) -> usize {
        self.global.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> (usize, usize, usize) {
        let s = self.local.shape();
        (s[1], s[2], s[3])
    }

    pub fn local_vector(&self, image: usize, y: usize, x: usize) -> ArrayView1<'_, f32> {
        self.local.slice(ndarray::s![image, y, x, ..])
    }

    /// Mean of every local vector of each image, `[N, C]`.
    pub fn local_mean(&self) -> Array2<f32> {
        let (h, w, c) = self.grid();
        let n = self.len();
        self.local
            .to_shape((n, h * w, c))
            .expect("contiguous local grid")
            .mean_axis(ndarray::Axis(1))
            .expect("non-empty grid")
    }

    /// Rows `idx` of both global and local features.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            global: self.global.select(ndarray::Axis(0), idx),
            local: self.local.select(ndarray::Axis(0), idx),
            geometry: self.geometry,
            source: self.source.clone(),
        }
    }

    pub fn ensure_frozen(&self) -> Result<()> {
        match self.source {
            FeatureSource::Live => Err(Error::Zfs(
                "features come from an encoder that is still trainable".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Encoder with gradients disabled and batch norm in evaluation mode.
pub struct FrozenEncoder {
    inner: Encoder,
    checksum: String,
}

pub const ENCODE_BATCH: usize = 64;

impl FrozenEncoder {
    pub fn spec(&self) -> &EncoderSpec {
        self.inner.spec()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.inner
    }

    /// Checksum taken at freezing time.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Recomputes the parameter checksum and compares with the frozen one.
    pub fn verify_unchanged(&self) -> Result<()> {
        if self.inner.store.checksum()? != self.checksum {
            return Err(Error::Zfs("frozen encoder parameters changed".into()));
        }
        Ok(())
    }

    pub fn encode(&self, inputs: &[Preprocessed]) -> Result<FeatureBundle> {
        self.encode_tap(inputs, Tap::Block(self.spec().local_tap))
    }

    /// Global features plus the local map read at `tap`.
    pub fn encode_tap(&self, inputs: &[Preprocessed], tap: Tap) -> Result<FeatureBundle> {
        let geometry = receptive_field(self.spec(), tap)?;
        let (h, w, c) = geometry.grid;
        let d = self.spec().global_dim;
        let mut global = Vec::with_capacity(inputs.len() * d);
        let mut local = Vec::with_capacity(inputs.len() * h * w * c);
        for chunk in inputs.chunks(ENCODE_BATCH) {
            let x = batch_tensor(chunk, self.spec().input_size, self.inner.dtype())?;
            let out = self.inner.forward_with_taps(&x, false, &[tap])?;
            global.extend(out.global.detach().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
            let l = out.taps[0].detach().permute((0, 2, 3, 1))?.to_dtype(DType::F32)?;
            local.extend(l.flatten_all()?.to_vec1::<f32>()?);
        }
        let n = inputs.len();
        Ok(FeatureBundle {
            global: Array2::from_shape_vec((n, d), global).map_err(|e| Error::Shape(e.to_string()))?,
            local: Array4::from_shape_vec((n, h, w, c), local).map_err(|e| Error::Shape(e.to_string()))?,
            geometry,
            source: FeatureSource::Frozen {
                checksum: self.checksum.clone(),
            },
        })
    }

    pub fn into_inner(self) -> Encoder {
        self.inner
    }
}

/// Stacks preprocessed images into `[N, 3, size, size]`.
pub fn batch_tensor(inputs: &[Preprocessed], size: usize, dtype: DType) -> Result<Tensor> {
    let per = 3 * size * size;
    let mut data = Vec::with_capacity(inputs.len() * per);
    for (i, p) in inputs.iter().enumerate() {
        if p.data.len() != per {
            return Err(Error::Shape(format!(
                "input {i} has {} values, expected 3x{size}x{size}",
                p.data.len()
            )));
        }
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor::from_vec(data, (inputs.len(), 3, size, size), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn tiny() -> EncoderSpec {
        EncoderSpec::basic().scaled(16, 32, 32)
    }

    #[test]
    fn full_size_basic_shapes() {
        let enc = Encoder::new(EncoderSpec::basic(), 0, DType::F32).unwrap();
        let x = Tensor::zeros((1, 3, 112, 112), DType::F32, &Device::Cpu).unwrap();
        let out = enc.forward(&x, false).unwrap();
        assert_eq!(out.global.dims(), &[1, 1024]);
        assert_eq!(out.local.dims(), &[1, 256, 14, 14]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Encoder::new(tiny(), 7, DType::F32).unwrap();
        let b = Encoder::new(tiny(), 7, DType::F32).unwrap();
        let c = Encoder::new(tiny(), 8, DType::F32).unwrap();
        assert_eq!(a.store().checksum().unwrap(), b.store().checksum().unwrap());
        assert_ne!(a.store().checksum().unwrap(), c.store().checksum().unwrap());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let enc = Encoder::new(tiny(), 0, DType::F32).unwrap();
        let x = Tensor::zeros((2, 3, 30, 30), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(enc.forward(&x, false), Err(Error::Shape(_))));
    }

    #[test]
    fn eval_mode_is_deterministic_and_finite() {
        let enc = Encoder::new(tiny(), 0, DType::F32).unwrap().freeze().unwrap();
        let zero = Preprocessed {
            data: vec![0.0; 3 * 32 * 32],
            offset: (0, 0),
        };
        let ramp = Preprocessed {
            data: (0..3 * 32 * 32).map(|i| (i % 17) as f32 / 8.5 - 1.0).collect(),
            offset: (0, 0),
        };
        let f = enc.encode(&[ramp.clone(), zero, ramp]).unwrap();
        assert_eq!(f.global.row(0), f.global.row(2));
        assert!(f.global.iter().chain(f.local.iter()).all(|v| v.is_finite()));
        assert_eq!(f.grid(), (4, 4, 16));
        enc.verify_unchanged().unwrap();
    }

    #[test]
    fn extra_taps_have_spec_shapes() {
        let spec = EncoderSpec::alexnet().scaled(16, 32, 56);
        let enc = Encoder::new(spec.clone(), 0, DType::F32).unwrap();
        let x = Tensor::zeros((1, 3, 56, 56), DType::F32, &Device::Cpu).unwrap();
        let taps = [Tap::PrePool(5), Tap::Block(5)];
        let out = enc.forward_with_taps(&x, false, &taps).unwrap();
        for (t, tensor) in taps.iter().zip(&out.taps) {
            let (h, w, c) = spec.tap_shape(*t).unwrap();
            assert_eq!(tensor.dims(), &[1, c, h, w]);
        }
    }
}
