use candle_core::Tensor;

use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::nn::{ConvTranspose2d, Linear, Mlp, ParamStore};

/// Maps a latent code back to an image: a linear layer onto an
/// `[C, S/8, S/8]` map followed by three 4x4 stride-2 transposed
/// convolutions and `tanh`.
pub struct Decoder {
    fc: Linear,
    channels: usize,
    side: usize,
    ups: Vec<ConvTranspose2d>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, name: &str, latent_dim: usize, spec: &EncoderSpec) -> Result<Self> {
        if spec.input_size % 8 != 0 {
            return Err(Error::Config(format!(
                "decoder needs an input size divisible by 8, got {}",
                spec.input_size
            )));
        }
        let base = spec.conv.first().map(|c| c.out_channels).unwrap_or(8).max(4);
        let channels = 4 * base;
        let side = spec.input_size / 8;
        let fc = Linear::new(store, &format!("{name}.fc"), latent_dim, channels * side * side)?;
        let widths = [channels, channels / 2, channels / 4, spec.input_channels];
        let ups = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| ConvTranspose2d::new(store, &format!("{name}.up{i}"), w[0], w[1], 4, 2, 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fc,
            channels,
            side,
            ups,
        })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.dim(0)?;
        let mut h = self
            .fc
            .forward(z)?
            .relu()?
            .reshape((n, self.channels, self.side, self.side))?;
        let last = self.ups.len() - 1;
        for (i, up) in self.ups.iter().enumerate() {
            h = up.forward(&h)?;
            h = if i < last { h.relu()? } else { h.tanh()? };
        }
        Ok(h)
    }
}

/// Critic projections for the infomax objectives: an MLP on the global
/// vector and a per-cell MLP (a stack of 1x1 convolutions) on the local map.
pub struct InfomaxProjectors {
    global: Mlp,
    local: Mlp,
}

impl InfomaxProjectors {
    pub fn new(store: &mut ParamStore, name: &str, global_dim: usize, local_channels: usize, embed: usize) -> Result<Self> {
        Ok(Self {
            global: Mlp::new(store, &format!("{name}.global"), &[global_dim, embed, embed])?,
            local: Mlp::new(store, &format!("{name}.local"), &[local_channels, embed, embed])?,
        })
    }

    /// `[N, D] -> [N, E]`
    pub fn global(&self, g: &Tensor) -> Result<Tensor> {
        self.global.forward(g)
    }

    /// `[N, C, H, W] -> [N, H*W, E]`
    pub fn local(&self, l: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = l.dims4()?;
        let cells = l.permute((0, 2, 3, 1))?.reshape((n, h * w, c))?;
        self.local.forward(&cells)
    }
}
