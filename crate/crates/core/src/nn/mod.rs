//! Small neural-network toolkit on top of `candle-core`.
//!
//! Parameters are created from a seeded generator so that two runs with the
//! same seed produce bit-identical networks; `candle`'s own random
//! initialisers draw from a thread-local generator and are not used here.

mod layers;
mod ops;
mod optim;
mod params;
mod pool;

pub use layers::{BatchNorm, Conv2d, ConvTranspose2d, Linear, Mlp};
pub use ops::{
    bce_with_logits, cross_entropy, log_mean_exp, logsumexp_all, masked_logsumexp_rows, softmax_rows,
};
pub use optim::adam;
pub use params::ParamStore;
pub use candle_nn::optim::{AdamW, Optimizer};
pub use pool::max_pool2d;
