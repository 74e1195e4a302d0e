use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Basic,
    Alexnet,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Basic => "basic",
            Family::Alexnet => "alexnet",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" | "dcgan" => Ok(Family::Basic),
            "alexnet" | "alex" => Ok(Family::Alexnet),
            other => Err(Error::Config(format!("unknown encoder family `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

/// One convolution block: conv -> batch norm -> ReLU -> optional max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub batch_norm: bool,
    pub pool: Option<PoolSpec>,
}

impl ConvSpec {
    const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize, pool: Option<PoolSpec>) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
            batch_norm: true,
            pool,
        }
    }
}

/// Where a feature map is read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tap {
    /// Output of conv block `i`, after its pooling layer if it has one.
    Block(usize),
    /// Output of conv block `i` before its pooling layer.
    PrePool(usize),
}

impl Tap {
    pub fn block(self) -> usize {
        match self {
            Tap::Block(i) | Tap::PrePool(i) => i,
        }
    }
}

/// Layer table of a convolutional encoder.
///
/// Fully connected layers (`fc_hidden`, then `global_dim`) each carry batch
/// norm and ReLU; the last one produces the global feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: Family,
    pub input_size: usize,
    pub input_channels: usize,
    pub conv: Vec<ConvSpec>,
    pub fc_hidden: Vec<usize>,
    pub global_dim: usize,
    pub local_tap: usize,
}

const MAX_POOL: Option<PoolSpec> = Some(PoolSpec { kernel: 3, stride: 2 });

impl EncoderSpec {
    /// DCGAN-style encoder: five stride-2 4x4 convolutions and one linear layer.
    pub fn basic() -> Self {
        Self {
            family: Family::Basic,
            input_size: 112,
            input_channels: 3,
            conv: vec![
                ConvSpec::new(64, 4, 2, 1, None),
                ConvSpec::new(128, 4, 2, 1, None),
                ConvSpec::new(256, 4, 2, 1, None),
                ConvSpec::new(512, 4, 2, 1, None),
                ConvSpec::new(1024, 4, 2, 1, None),
            ],
            fc_hidden: vec![],
            global_dim: 1024,
            local_tap: 2,
        }
    }

    /// AlexNet-style encoder: six 3x3 convolutions, four 3x3/2 max pools,
    /// two 4096 hidden layers and a final 1024 projection.
    pub fn alexnet() -> Self {
        Self {
            family: Family::Alexnet,
            input_size: 112,
            input_channels: 3,
            conv: vec![
                ConvSpec::new(96, 3, 1, 1, MAX_POOL),
                ConvSpec::new(192, 3, 1, 1, MAX_POOL),
                ConvSpec::new(384, 3, 1, 1, None),
                ConvSpec::new(384, 3, 1, 1, None),
                ConvSpec::new(192, 3, 1, 1, MAX_POOL),
                ConvSpec::new(192, 3, 1, 1, MAX_POOL),
            ],
            fc_hidden: vec![4096, 4096],
            global_dim: 1024,
            local_tap: 2,
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Basic => Self::basic(),
            Family::Alexnet => Self::alexnet(),
        }
    }

    /// Same topology with every width divided by `width_div`, a different
    /// global dimension and input size. Used for desk-scale runs; receptive
    /// field geometry is unchanged.
    pub fn scaled(mut self, width_div: usize, global_dim: usize, input_size: usize) -> Self {
        let div = width_div.max(1);
        for c in &mut self.conv {
            c.out_channels = (c.out_channels / div).max(1);
        }
        for h in &mut self.fc_hidden {
            *h = (*h / div).max(1);
        }
        self.global_dim = global_dim;
        self.input_size = input_size;
        self
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    /// Spatial side length after every block: `(pre_pool, post_pool)`.
    pub fn spatial_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let mut n = self.input_size;
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, c) in self.conv.iter().enumerate() {
            let padded = n + 2 * c.padding;
            if padded < c.kernel || c.stride == 0 {
                return Err(Error::Shape(format!(
                    "conv block {i}: input {n} with padding {} is smaller than kernel {}",
                    c.padding, c.kernel
                )));
            }
            let pre = (padded - c.kernel) / c.stride + 1;
            let post = match c.pool {
                Some(p) if pre < p.kernel => {
                    return Err(Error::Shape(format!(
                        "pool after block {i}: map {pre} smaller than kernel {}",
                        p.kernel
                    )))
                }
                Some(p) => (pre - p.kernel) / p.stride + 1,
                None => pre,
            };
            out.push((pre, post));
            n = post;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("encoder needs at least one conv block".into()));
        }
        if self.local_tap >= self.conv.len() {
            return Err(Error::Config(format!(
                "local tap {} out of range for {} blocks",
                self.local_tap,
                self.conv.len()
            )));
        }
        if self.global_dim == 0 || self.input_channels == 0 {
            return Err(Error::Config("zero-sized encoder dimension".into()));
        }
        self.spatial_sizes().map(|_| ())
    }

    /// `(height, width, channels)` of the map read at `tap`.
    pub fn tap_shape(&self, tap: Tap) -> Result<(usize, usize, usize)> {
        let sizes = self.spatial_sizes()?;
        let i = tap.block();
        let (pre, post) = *sizes
            .get(i)
            .ok_or_else(|| Error::Config(format!("tap block {i} does not exist")))?;
        let side = match tap {
            Tap::Block(_) => post,
            Tap::PrePool(_) => pre,
        };
        Ok((side, side, self.conv[i].out_channels))
    }

    pub fn local_shape(&self) -> Result<(usize, usize, usize)> {
        self.tap_shape(Tap::Block(self.local_tap))
    }

    pub fn flatten_dim(&self) -> Result<usize> {
        let sizes = self.spatial_sizes()?;
        let side = sizes.last().map(|s| s.1).unwrap_or(0);
        Ok(side * side * self.conv.last().map(|c| c.out_channels).unwrap_or(0))
    }

    /// Whether `tap` names a pooled block so that pre/post variants differ.
    pub fn has_pool(&self, block: usize) -> bool {
        self.conv.get(block).map(|c| c.pool.is_some()).unwrap_or(false)
    }
}
