use candle_core::Tensor;
use ndarray::Array2;

use super::heads::Decoder;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, cross_entropy, Linear, Mlp};

/// Posterior log-variances are clamped to this range before use.
pub const LOGVAR_CLAMP: f64 = 8.0;

/// Cross-entropy of a linear head on the global vector.
pub fn supervised_loss(head: &Linear, global: &Tensor, labels: &[usize]) -> Result<Tensor> {
    cross_entropy(&head.forward(global)?, labels)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over dimensions and averaged
/// over the batch.
pub fn kl_standard_normal(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let logvar = logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    let n = mu.dim(0)? as f64;
    let per = ((mu.sqr()? + logvar.exp()?)? - logvar)?;
    let k = mu.elem_count() as f64;
    Ok(((per.sum_all()? - k)? * (0.5 / n))?)
}

/// Half the squared error summed over pixels, averaged over the batch.
pub fn reconstruction_loss(recon: &Tensor, target: &Tensor) -> Result<Tensor> {
    if recon.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            recon.dims(),
            target.dims()
        )));
    }
    let n = recon.dim(0)? as f64;
    Ok(((recon - target)?.sqr()?.sum_all()? * (0.5 / n))?)
}

pub struct VaeLosses {
    pub recon: Tensor,
    pub kl: Tensor,
    pub total: Tensor,
}

/// Evidence lower bound with KL weight `beta`; `noise` is a standard normal
/// sample shaped like `mu`.
pub fn vae_loss(
    mu: &Tensor,
    logvar: &Tensor,
    noise: &Tensor,
    decoder: &Decoder,
    target: &Tensor,
    beta: f64,
) -> Result<VaeLosses> {
    let std = (logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)? * 0.5)?.exp()?;
    let z = (mu + (std * noise)?)?;
    let recon = reconstruction_loss(&decoder.forward(&z)?, target)?;
    let kl = kl_standard_normal(mu, logvar)?;
    let total = (&recon + (&kl * beta)?)?;
    Ok(VaeLosses { recon, kl, total })
}

pub struct AaeLosses {
    pub recon: Tensor,
    /// Encoder-side adversarial loss: codes should look like prior samples.
    pub generator: Tensor,
    /// Discriminator loss on prior samples (real) against detached codes.
    pub discriminator: Tensor,
}

pub fn aae_losses(
    code: &Tensor,
    prior: &Tensor,
    decoder: &Decoder,
    discriminator: &Mlp,
    target: &Tensor,
) -> Result<AaeLosses> {
    let recon = reconstruction_loss(&decoder.forward(code)?, target)?;
    let fake = discriminator.forward(code)?;
    let generator = bce_with_logits(&fake, &fake.ones_like()?)?;
    let real = discriminator.forward(prior)?;
    let fake_d = discriminator.forward(&code.detach())?;
    let discriminator =
        ((bce_with_logits(&real, &real.ones_like()?)? + bce_with_logits(&fake_d, &fake_d.zeros_like()?)?)? * 0.5)?;
    Ok(AaeLosses {
        recon,
        generator,
        discriminator,
    })
}

/// Target of the per-cell auxiliary classifier.
pub enum LocalTarget {
    /// `[N, A]` binary attribute targets (AC).
    Attributes(Tensor),
    /// Class index per input (LC).
    Labels(Vec<usize>),
}

/// Applies one shared linear head at every cell of `local: [N, C, H, W]` and
/// averages the per-cell losses.
pub fn local_aux_loss(local: &Tensor, head: &Linear, target: &LocalTarget) -> Result<Tensor> {
    let (n, c, h, w) = local.dims4()?;
    let cells = h * w;
    let flat = local.permute((0, 2, 3, 1))?.reshape((n * cells, c))?;
    let logits = head.forward(&flat)?;
    match target {
        LocalTarget::Attributes(t) => {
            let (tn, ta) = t.dims2()?;
            if tn != n || ta != head.out_dim() {
                return Err(Error::Shape(format!(
                    "attribute targets {:?} for {n} inputs and {} outputs",
                    t.dims(),
                    head.out_dim()
                )));
            }
            let rep = t.unsqueeze(1)?.broadcast_as((n, cells, ta))?.reshape((n * cells, ta))?;
            bce_with_logits(&logits, &rep)
        }
        LocalTarget::Labels(labels) => {
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} inputs", labels.len())));
            }
            let rep: Vec<usize> = labels.iter().flat_map(|&l| std::iter::repeat_n(l, cells)).collect();
            cross_entropy(&logits, &rep)
        }
    }
}

/// Binary attribute targets: each attribute is centred on its mean over
/// `train_classes` and compared with `threshold` (strictly greater is 1).
pub fn binarize_for_ac(attributes: &Array2<f64>, train_classes: &[usize], threshold: f64) -> Result<Array2<f32>> {
    if train_classes.is_empty() {
        return Err(Error::Degenerate("no train classes".into()));
    }
    let rows = attributes.select(ndarray::Axis(0), train_classes);
    let mean = rows.mean_axis(ndarray::Axis(0)).expect("non-empty");
    Ok(Array2::from_shape_fn(attributes.dim(), |(c, a)| {
        if attributes[[c, a]] - mean[a] > threshold {
            1.0
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn t(v: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn s(x: &Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn kl_closed_form_cases() {
        let zero = t(vec![0.0; 6], &[2, 3]);
        assert_eq!(s(&kl_standard_normal(&zero, &zero).unwrap()), 0.0);
        let one = t(vec![1.0; 6], &[2, 3]);
        assert!((s(&kl_standard_normal(&one, &zero).unwrap()) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_independent_formula_and_monte_carlo() {
        let mu = [0.3, -1.2, 0.7];
        let lv = [-0.5, 0.4, 1.1];
        let got = s(&kl_standard_normal(&t(mu.to_vec(), &[1, 3]), &t(lv.to_vec(), &[1, 3])).unwrap());
        let mut want = 0.0;
        let mut mc = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let draws = 200_000;
        for d in 0..3 {
            let var: f64 = f64::exp(lv[d]);
            want += 0.5 * (var + mu[d] * mu[d] - 1.0 - lv[d]);
            let mut acc = 0.0;
            for _ in 0..draws {
                let z = mu[d] + var.sqrt() * normal.sample(&mut rng);
                // log q(z) - log p(z)
                acc += -0.5 * ((z - mu[d]).powi(2) / var + lv[d]) + 0.5 * z * z;
            }
            mc += acc / draws as f64;
        }
        assert!((got - want).abs() < 1e-12);
        assert!((mc - want).abs() < 0.02, "monte carlo {mc} vs {want}");
    }

    #[test]
    fn huge_logvar_is_clamped() {
        let mu = t(vec![0.0], &[1, 1]);
        let lv = t(vec![500.0], &[1, 1]);
        let kl = s(&kl_standard_normal(&mu, &lv).unwrap());
        assert!((kl - 0.5 * (LOGVAR_CLAMP.exp() - 1.0 - LOGVAR_CLAMP)).abs() < 1e-9);
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let x = t(vec![0.5, -0.25, 1.0, 0.0], &[1, 1, 2, 2]);
        assert_eq!(s(&reconstruction_loss(&x, &x).unwrap()), 0.0);
        let y = t(vec![0.0; 4], &[1, 1, 2, 2]);
        assert!((s(&reconstruction_loss(&x, &y).unwrap()) - 0.5 * (0.25 + 0.0625 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_is_ln2_at_half() {
        let mut store = ParamStore::new(0, DType::F64);
        let spec = crate::encoders::EncoderSpec::basic().scaled(16, 4, 16);
        let dec = Decoder::new(&mut store, "dec", 4, &spec).unwrap();
        // zero weights make the discriminator output logit 0, i.e. D = 0.5
        let zero_disc = zero_mlp(4);
        let code = t(vec![0.1, 0.2, 0.3, 0.4, -1.0, 0.0, 2.0, 1.0], &[2, 4]);
        let target = Tensor::zeros((2, 3, 16, 16), DType::F64, &Device::Cpu).unwrap();
        let l = aae_losses(&code, &code, &dec, &zero_disc, &target).unwrap();
        assert!((s(&l.generator) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((s(&l.discriminator) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    fn zero_mlp(input: usize) -> Mlp {
        let mut store = ParamStore::new(0, DType::F64);
        let mlp = Mlp::new(&mut store, "d", &[input, 1]).unwrap();
        for (_, v) in store.trainable_named() {
            v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
        }
        mlp
    }

    #[test]
    fn supervised_loss_uniform_logits_is_ln_c() {
        let head = Linear::from_tensors(
            Tensor::zeros((5, 3), DType::F64, &Device::Cpu).unwrap(),
            None,
        );
        let g = t(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let l = s(&supervised_loss(&head, &g, &[0, 4]).unwrap());
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn supervised_loss_hand_computed() {
        // identity head: logits equal the global vector
        let head = Linear::from_tensors(
            t(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]),
            None,
        );
        let g = t(vec![2.0, 0.0, 0.0, 1.0], &[2, 2]);
        let got = s(&supervised_loss(&head, &g, &[0, 0]).unwrap());
        let l0 = -(2f64.exp() / (2f64.exp() + 1.0)).ln();
        let l1 = -(1.0 / (1.0 + 1f64.exp())).ln();
        assert!((got - (l0 + l1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn local_loss_on_1x1_grid_equals_global_loss() {
        let head = Linear::from_tensors(t(vec![0.5, -1.0, 2.0, 0.3, 0.1, -0.2], &[3, 2]), Some(t(vec![0.1, 0.0, -0.1], &[3])));
        let g = t(vec![1.0, -2.0, 0.5, 0.25], &[2, 2]);
        let local = g.reshape((2, 2, 1, 1)).unwrap();
        let lc = s(&local_aux_loss(&local, &head, &LocalTarget::Labels(vec![2, 0])).unwrap());
        assert!((lc - s(&supervised_loss(&head, &g, &[2, 0]).unwrap())).abs() < 1e-15);
        let tgt = t(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0], &[2, 3]);
        let ac = s(&local_aux_loss(&local, &head, &LocalTarget::Attributes(tgt.clone())).unwrap());
        let direct = s(&bce_with_logits(&head.forward(&g).unwrap(), &tgt).unwrap());
        assert!((ac - direct).abs() < 1e-15);
    }

    #[test]
    fn local_loss_2x2_is_mean_of_cells() {
        let head = Linear::from_tensors(t(vec![1.0, -1.0, 0.5, 2.0], &[2, 2]), Some(t(vec![0.2, -0.3], &[2])));
        // [N=1, C=2, H=2, W=2]
        let vals = vec![0.1, 0.7, -0.4, 1.2, 0.9, -0.6, 0.3, 0.0];
        let local = t(vals.clone(), &[1, 2, 2, 2]);
        let got = s(&local_aux_loss(&local, &head, &LocalTarget::Labels(vec![1])).unwrap());
        let mut want = 0.0;
        for cell in 0..4 {
            let x = [vals[cell], vals[4 + cell]];
            let z0 = x[0] - x[1] + 0.2;
            let z1 = 0.5 * x[0] + 2.0 * x[1] - 0.3;
            want += -(z1.exp() / (z0.exp() + z1.exp())).ln();
        }
        assert!((got - want / 4.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_local_predictions_give_near_zero_loss() {
        let head = Linear::from_tensors(t(vec![100.0, -100.0], &[2, 1]), None);
        let local = t(vec![1.0; 4], &[1, 1, 2, 2]);
        let l = s(&local_aux_loss(&local, &head, &LocalTarget::Labels(vec![0])).unwrap());
        assert!(l < 1e-12);
    }

    #[test]
    fn ac_binarization_centres_on_train_mean() {
        let a = ndarray::array![[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]];
        let b = binarize_for_ac(&a, &[0, 1], 0.0).unwrap();
        assert_eq!(b, ndarray::array![[1.0f32, 0.0], [0.0, 1.0], [0.0, 0.0]]);
    }
}
