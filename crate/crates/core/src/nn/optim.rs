use candle_core::Var;
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};

use crate::error::Result;

/// Plain Adam (`AdamW` with zero weight decay), betas 0.9 / 0.999.
pub fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}
