//! Local/global mutual-information bounds over a batch score tensor.
//!
//! `scores[i, j, m]` is the critic value between the global vector used for
//! anchor `i` (taken from the anchor's positive source) and local cell `m` of
//! input `j`. Positives are `scores[i, i, m]`; negatives are `scores[i, j, m]`
//! for every `j` in the anchor's negative set.

use candle_core::{Tensor, D};

use super::pairing::PairingPlan;
use super::Estimator;
use crate::error::{Error, Result};
use crate::nn::{log_mean_exp, masked_logsumexp_rows};

/// `S[i, j, m] = <g_i, l_{j,m}>` for `global: [N, E]`, `local: [N, M, E]`.
pub fn score_tensor(global: &Tensor, local: &Tensor) -> Result<Tensor> {
    let (n, e) = global.dims2()?;
    let (nl, m, el) = local.dims3()?;
    if nl != n || el != e {
        return Err(Error::Shape(format!(
            "global {:?} and local {:?} projections disagree",
            global.dims(),
            local.dims()
        )));
    }
    let flat = local.reshape((n * m, e))?;
    Ok(global.matmul(&flat.t()?)?.reshape((n, n, m))?)
}

/// Donsker-Varadhan bound `mean(joint) - log mean exp(marginal)`.
pub fn dv_bound(joint: &Tensor, marginal: &Tensor) -> Result<Tensor> {
    Ok((joint.mean_all()? - log_mean_exp(marginal)?)?)
}

/// Contrastive bound `mean(s+ - log(e^{s+} + sum e^{s-})) + mean log(1 + K)`
/// given each positive's negative logsumexp `neg_lse` and count `k`.
pub fn nce_bound(positive: &Tensor, neg_lse: &Tensor, k: &[usize]) -> Result<Tensor> {
    let pos = positive.flatten_all()?;
    let neg = neg_lse.flatten_all()?;
    if pos.dims() != neg.dims() || k.len() != pos.elem_count() {
        return Err(Error::Shape("positive/negative score counts differ".into()));
    }
    let pair = Tensor::stack(&[&pos, &neg], 1)?;
    let ones = pair.ones_like()?;
    let denom = masked_logsumexp_rows(&pair, &ones)?;
    let offset = k.iter().map(|&k| (1.0 + k as f64).ln()).sum::<f64>() / k.len() as f64;
    Ok(((pos - denom)?.mean_all()? + offset)?)
}

pub struct InfomaxTerms {
    /// Estimated lower bound (maximised).
    pub bound: Tensor,
    /// `-bound`, the quantity minimised by training.
    pub loss: Tensor,
}

pub fn infomax_loss(scores: &Tensor, plan: &PairingPlan, estimator: Estimator) -> Result<InfomaxTerms> {
    let (n, n2, m) = scores.dims3()?;
    if n != n2 || plan.len() != n {
        return Err(Error::Shape(format!(
            "score tensor {:?} does not match a plan over {} anchors",
            scores.dims(),
            plan.len()
        )));
    }
    if let Some(i) = plan.negatives.iter().position(Vec::is_empty) {
        return Err(Error::Degenerate(format!("anchor {i} has no negatives")));
    }
    let dev = scores.device();
    let rows = scores.reshape((n, n * m))?;
    let idx: Vec<u32> = (0..n).flat_map(|i| (0..m).map(move |c| (i * m + c) as u32)).collect();
    let idx = Tensor::from_vec(idx, (n, m), dev)?;
    let positive = rows.gather(&idx, 1)?;

    let neg = plan.negative_mask();
    let mask: Vec<f32> = neg.iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect();
    let mask = Tensor::from_vec(mask, (n, n * m), dev)?;

    let bound = match estimator {
        Estimator::Dv => {
            let count: usize = plan.negatives.iter().map(Vec::len).sum::<usize>() * m;
            let flat_mask = mask.reshape((1, n * n * m))?;
            let lse = masked_logsumexp_rows(&rows.reshape((1, n * n * m))?, &flat_mask)?;
            let lme = (lse.squeeze(0)? - (count as f64).ln())?;
            (positive.mean_all()? - lme)?
        }
        Estimator::Nce => {
            let lse = masked_logsumexp_rows(&rows, &mask)?;
            let lse = lse.unsqueeze(D::Minus1)?.broadcast_as((n, m))?.contiguous()?;
            let k: Vec<usize> = plan
                .negatives
                .iter()
                .flat_map(|negs| std::iter::repeat_n(negs.len() * m, m))
                .collect();
            nce_bound(&positive, &lse, &k)?
        }
    };
    let loss = bound.neg()?;
    Ok(InfomaxTerms { bound, loss })
}
