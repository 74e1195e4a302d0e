use candle_core::{Tensor, D};

use crate::error::{Error, Result};

/// Large negative additive mask; finite so that gradients stay NaN-free.
const MASKED: f64 = -1e30;

/// Mean binary cross-entropy with logits, `max(x,0) - x*t + ln(1 + e^{-|x|})`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let targets = targets.to_dtype(logits.dtype())?;
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let loss = ((logits.relu()? - (logits * targets)?)? + softplus)?;
    Ok(loss.mean_all()?)
}

/// Mean cross-entropy of `logits: [N, C]` against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Config(format!("label {bad} out of range for {c} classes")));
    }
    let ids: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let ids = Tensor::from_vec(ids, n, logits.device())?;
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&ids.unsqueeze(1)?, 1)?;
    Ok(picked.neg()?.mean_all()?)
}

/// `log(sum(exp(x)))` over every element, stabilised by the detached max.
pub fn logsumexp_all(x: &Tensor) -> Result<Tensor> {
    let flat = x.flatten_all()?;
    let m = flat.max(0)?.detach();
    let s = flat.broadcast_sub(&m)?.exp()?.sum_all()?;
    Ok((s.log()? + m)?)
}

/// `log(mean(exp(x)))` over every element.
pub fn log_mean_exp(x: &Tensor) -> Result<Tensor> {
    let n = x.elem_count();
    if n == 0 {
        return Err(Error::Degenerate("log-mean-exp of an empty tensor".into()));
    }
    Ok((logsumexp_all(x)? - (n as f64).ln())?)
}

/// Row-wise logsumexp of `x: [R, K]` restricted to entries where `mask` is 1.
///
/// Rows with an empty mask produce a value near `-1e30`; callers must not
/// pass such rows.
pub fn masked_logsumexp_rows(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let mask = mask.to_dtype(x.dtype())?;
    let additive = ((mask.ones_like()? - &mask)? * MASKED)?;
    let shifted = (x + additive)?;
    let m = shifted.max_keepdim(D::Minus1)?.detach();
    let s = shifted.broadcast_sub(&m)?.exp()?.sum_keepdim(D::Minus1)?;
    Ok((s.log()? + m)?.squeeze(D::Minus1)?)
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t(v: &[f64], shape: (usize, usize)) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn bce_matches_direct_formula() {
        let x = t(&[2.0, -1.0, 0.0, 30.0], (2, 2));
        let y = t(&[1.0, 0.0, 1.0, 0.0], (2, 2));
        let got = bce_with_logits(&x, &y).unwrap().to_scalar::<f64>().unwrap();
        // -ln(sigmoid(z)) for y = 1, -ln(1 - sigmoid(z)) for y = 0
        let pos = |z: f64| (1.0 + (-z).exp()).ln();
        let neg = |z: f64| z + (1.0 + (-z).exp()).ln();
        let direct = (pos(2.0) + neg(-1.0) + pos(0.0) + neg(30.0)) / 4.0;
        assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let x = Tensor::zeros((3, 5), DType::F64, &Device::Cpu).unwrap();
        let l = cross_entropy(&x, &[0, 3, 4]).unwrap().to_scalar::<f64>().unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let x = Tensor::zeros((1, 2), DType::F64, &Device::Cpu).unwrap();
        assert!(cross_entropy(&x, &[2]).is_err());
    }

    #[test]
    fn log_mean_exp_is_stable_for_large_scores() {
        let x = t(&[1000.0, 1000.0], (1, 2));
        let v = log_mean_exp(&x).unwrap().to_scalar::<f64>().unwrap();
        assert!((v - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn masked_rows_ignore_masked_entries() {
        let x = t(&[0.0, 5.0, 1.0, 1.0], (2, 2));
        let m = t(&[1.0, 0.0, 1.0, 1.0], (2, 2));
        let v = masked_logsumexp_rows(&x, &m).unwrap().to_vec1::<f64>().unwrap();
        assert!((v[0] - 0.0).abs() < 1e-12);
        assert!((v[1] - (1.0 + 2f64.ln())).abs() < 1e-12);
    }
}
