use serde::{Deserialize, Serialize};

use super::spec::{EncoderSpec, Tap};
use crate::error::Result;

/// Spatial layout of a feature map relative to the input image.
///
/// Cell `i` along an axis sees input pixels
/// `[first + i * jump, first + i * jump + receptive_field - 1]`, clipped to
/// the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGeometry {
    pub grid: (usize, usize, usize),
    pub receptive_field: usize,
    pub jump: usize,
    pub first: i64,
    pub input_size: usize,
}

impl FeatureGeometry {
    /// Inclusive pixel window of cell `i` along one axis, clipped to bounds.
    pub fn window(&self, i: usize) -> (usize, usize) {
        let lo = self.first + (i * self.jump) as i64;
        let hi = lo + self.receptive_field as i64 - 1;
        let max = self.input_size as i64 - 1;
        (lo.clamp(0, max) as usize, hi.clamp(0, max) as usize)
    }
}

/// Accumulates `rf' = rf + (k - 1) * jump`, `jump' = jump * s`,
/// `first' = first - p * jump` through one conv or pool layer.
#[derive(Clone, Copy, Debug)]
struct Walk {
    rf: usize,
    jump: usize,
    first: i64,
}

impl Walk {
    fn layer(self, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            rf: self.rf + (kernel - 1) * self.jump,
            jump: self.jump * stride,
            first: self.first - (padding * self.jump) as i64,
        }
    }
}

pub fn receptive_field(spec: &EncoderSpec, tap: Tap) -> Result<FeatureGeometry> {
    let grid = spec.tap_shape(tap)?;
    let mut w = Walk {
        rf: 1,
        jump: 1,
        first: 0,
    };
    for (i, c) in spec.conv.iter().enumerate().take(tap.block() + 1) {
        w = w.layer(c.kernel, c.stride, c.padding);
        let include_pool = i < tap.block() || matches!(tap, Tap::Block(_));
        if let (Some(p), true) = (c.pool, include_pool) {
            w = w.layer(p.kernel, p.stride, 0);
        }
    }
    Ok(FeatureGeometry {
        grid,
        receptive_field: w.rf,
        jump: w.jump,
        first: w.first,
        input_size: spec.input_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::spec::{ConvSpec, Family};

    #[test]
    fn single_layer_base_case() {
        let spec = EncoderSpec {
            family: Family::Basic,
            input_size: 16,
            input_channels: 3,
            conv: vec![ConvSpec {
                out_channels: 1,
                kernel: 4,
                stride: 2,
                padding: 1,
                batch_norm: false,
                pool: None,
            }],
            fc_hidden: vec![],
            global_dim: 1,
            local_tap: 0,
        };
        let g = receptive_field(&spec, Tap::Block(0)).unwrap();
        assert_eq!((g.receptive_field, g.jump), (4, 2));
    }

    #[test]
    fn basic_third_block() {
        let g = receptive_field(&EncoderSpec::basic(), Tap::Block(2)).unwrap();
        assert_eq!((g.receptive_field, g.jump, g.first), (22, 8, -7));
        assert_eq!(g.grid, (14, 14, 256));
        assert_eq!(g.window(0), (0, 14));
    }

    #[test]
    fn alexnet_final_block_by_recurrence() {
        let spec = EncoderSpec::alexnet();
        let pre = receptive_field(&spec, Tap::PrePool(5)).unwrap();
        let post = receptive_field(&spec, Tap::Block(5)).unwrap();
        assert_eq!((pre.receptive_field, pre.jump), (61, 8));
        assert_eq!((post.receptive_field, post.jump), (77, 16));
    }
}
