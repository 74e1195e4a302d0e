use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::augment::{augment_view, AugmentConfig};
use super::heads::{Decoder, InfomaxProjectors};
use super::infomax::{infomax_loss, score_tensor};
use super::losses::{aae_losses, binarize_for_ac, local_aux_loss, supervised_loss, vae_loss, LocalTarget};
use super::pairing::{cmdim_pairing, dim_pairing};
use super::{LocalLoss, ObjectiveConfig, ObjectiveKind};
use crate::datasets::{preprocess, DatasetBundle, Mode, PreprocessConfig, Preprocessed};
use crate::encoders::{batch_tensor, Encoder, EncoderSpec, Provenance};
use crate::error::{Error, Result};
use crate::nn::{adam, cross_entropy, Linear, Mlp, Optimizer, ParamStore};
use crate::zsl::ProtoHead;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub log_every: usize,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    /// Critic embedding width for the infomax objectives.
    pub infomax_dim: usize,
    /// Images per class in class-balanced batches (CMDIM).
    pub per_class: usize,
    /// Weight of the adversarial term in the AAE encoder loss.
    pub adversarial_weight: f64,
    /// Embedding width of the end-to-end prototypical head.
    pub proto_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            steps: 1000,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
            log_every: 10,
            preprocess: PreprocessConfig::default(),
            augment: AugmentConfig::default(),
            infomax_dim: 128,
            per_class: 4,
            adversarial_weight: 1.0,
            proto_dim: 512,
        }
    }
}

/// Loss curve entries `(step, name, value)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub entries: Vec<(usize, String, f64)>,
}

impl LossLog {
    pub fn push(&mut self, step: usize, name: &str, value: f64) {
        self.entries.push((step, name.to_string(), value));
    }

    pub fn values(&self, name: &str) -> Vec<(usize, f64)> {
        self.entries
            .iter()
            .filter(|(_, n, _)| n == name)
            .map(|(s, _, v)| (*s, *v))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(s, n, v)| format!("{s}\t{n}\t{v}\n"))
            .collect()
    }

    /// Appends `step<TAB>name<TAB>value` lines to `path`.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_tsv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub struct TrainedEncoder {
    pub encoder: Encoder,
    pub provenance: Provenance,
    pub log: LossLog,
}

enum Heads {
    Fc(Linear),
    Vae { mu: Linear, logvar: Linear, decoder: Decoder },
    Aae { code: Linear, decoder: Decoder, disc: Mlp, disc_store: ParamStore },
    Infomax(InfomaxProjectors),
    Proto(ProtoHead),
}

struct Batch {
    indices: Vec<usize>,
    labels: Vec<usize>,
    /// Position of each label within the train classes.
    positions: Vec<usize>,
}

struct Sampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    by_class: Vec<(usize, Vec<usize>)>,
}

impl Sampler {
    fn new(data: &DatasetBundle) -> Self {
        let pool = data.train_indices();
        let by_class = data
            .split
            .train
            .iter()
            .map(|&c| (c, data.indices_of(&[c])))
            .filter(|(_, v)| !v.is_empty())
            .collect();
        Self {
            order: pool.clone(),
            cursor: pool.len(),
            pool,
            by_class,
        }
    }

    fn uniform(&mut self, bs: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let bs = bs.min(self.pool.len());
        if self.cursor + bs > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + bs].to_vec();
        self.cursor += bs;
        out
    }

    /// `bs / k` distinct classes with `k` images each (drawn with
    /// replacement only when a class has fewer than `k` images).
    fn class_balanced(&mut self, bs: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = k.max(2);
        let p = (bs / k).clamp(2, self.by_class.len().max(2)).min(self.by_class.len());
        let classes: Vec<&(usize, Vec<usize>)> = self.by_class.choose_multiple(rng, p).collect();
        let mut out = Vec::with_capacity(p * k);
        for (_, members) in classes {
            if members.len() >= k {
                out.extend(members.choose_multiple(rng, k).copied());
            } else {
                out.extend((0..k).map(|_| *members.choose(rng).expect("non-empty")));
            }
        }
        out
    }
}

fn normal_tensor(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let data: Vec<f32> = (0..shape.0 * shape.1).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn accuracy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let pred = logits.argmax(1)?.to_vec1::<u32>()?;
    let hits = pred.iter().zip(targets).filter(|(p, t)| **p as usize == **t).count();
    Ok(hits as f64 / targets.len().max(1) as f64)
}

/// Trains a freshly seeded encoder with `cfg.objective` on the train classes
/// of `data`.
pub fn train_encoder(spec: &EncoderSpec, cfg: &TrainConfig, data: &DatasetBundle) -> Result<TrainedEncoder> {
    let obj = &cfg.objective;
    obj.validate()?;
    if spec.input_size != cfg.preprocess.crop {
        return Err(Error::Config(format!(
            "encoder input {} differs from crop size {}",
            spec.input_size, cfg.preprocess.crop
        )));
    }
    if data.split.train.len() < 2 {
        return Err(Error::Degenerate("training needs at least two train classes".into()));
    }
    let encoder = Encoder::new(spec.clone(), cfg.seed, DType::F32)?;
    let mut head_store = ParamStore::new(cfg.seed.wrapping_add(1), DType::F32);
    let (_, _, lc) = spec.local_shape()?;
    let num_train = data.split.train.len();
    let gdim = spec.global_dim;

    let heads = match obj.kind {
        ObjectiveKind::Fc => Heads::Fc(Linear::new(&mut head_store, "fc", gdim, num_train)?),
        ObjectiveKind::Vae | ObjectiveKind::Bvae => Heads::Vae {
            mu: Linear::new(&mut head_store, "mu", gdim, gdim)?,
            logvar: Linear::new(&mut head_store, "logvar", gdim, gdim)?,
            decoder: Decoder::new(&mut head_store, "decoder", gdim, spec)?,
        },
        ObjectiveKind::Aae => {
            let mut disc_store = ParamStore::new(cfg.seed.wrapping_add(2), DType::F32);
            let disc = Mlp::new(&mut disc_store, "disc", &[gdim, gdim, gdim, 1])?;
            Heads::Aae {
                code: Linear::new(&mut head_store, "code", gdim, gdim)?,
                decoder: Decoder::new(&mut head_store, "decoder", gdim, spec)?,
                disc,
                disc_store,
            }
        }
        ObjectiveKind::Dim | ObjectiveKind::Amdim | ObjectiveKind::Cmdim => Heads::Infomax(InfomaxProjectors::new(
            &mut head_store,
            "infomax",
            gdim,
            lc,
            cfg.infomax_dim,
        )?),
        ObjectiveKind::Pn => Heads::Proto(ProtoHead::new(
            &mut head_store,
            "proto",
            gdim,
            data.num_attributes(),
            cfg.proto_dim,
            cfg.proto_dim,
        )?),
    };
    let local_head = match obj.local_loss {
        LocalLoss::None => None,
        LocalLoss::Ac => Some(Linear::new(&mut head_store, "local_ac", lc, data.num_attributes())?),
        LocalLoss::Lc => Some(Linear::new(&mut head_store, "local_lc", lc, num_train)?),
    };
    let ac_targets = binarize_for_ac(&data.attributes, &data.split.train, obj.ac_threshold)?;
    let attr_f32 = data.attributes.mapv(|v| v as f32);

    let mut vars = encoder.store().trainable_vars();
    vars.extend(head_store.trainable_vars());
    let mut opt = adam(vars, cfg.lr)?;
    let mut disc_opt = match &heads {
        Heads::Aae { disc_store, .. } => Some(adam(disc_store.trainable_vars(), cfg.lr)?),
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(17));
    let mut sampler = Sampler::new(data);
    let mut log = LossLog::default();
    let estimator = obj.effective_estimator();
    let pp = cfg.preprocess;

    for step in 0..cfg.steps {
        let indices = if obj.kind == ObjectiveKind::Cmdim {
            sampler.class_balanced(cfg.batch_size, cfg.per_class, &mut rng)
        } else {
            sampler.uniform(cfg.batch_size, &mut rng)
        };
        let batch = Batch {
            labels: indices.iter().map(|&i| data.labels[i]).collect(),
            positions: indices
                .iter()
                .map(|&i| data.split.train_position(data.labels[i]).expect("train image"))
                .collect(),
            indices,
        };
        let n = batch.indices.len();
        let views: Vec<Preprocessed> = if obj.kind == ObjectiveKind::Amdim {
            let mut v: Vec<Preprocessed> = batch
                .indices
                .iter()
                .map(|&i| augment_view(&data.images[i], &pp, &cfg.augment, &mut rng))
                .collect();
            v.extend(
                batch
                    .indices
                    .iter()
                    .map(|&i| augment_view(&data.images[i], &pp, &cfg.augment, &mut rng))
                    .collect::<Vec<_>>(),
            );
            v
        } else {
            batch
                .indices
                .iter()
                .map(|&i| preprocess(&data.images[i], Mode::Train, &mut rng, &pp))
                .collect()
        };
        let x = batch_tensor(&views, spec.input_size, DType::F32)?;
        let out = encoder.forward(&x, true)?;
        let mut parts: Vec<(&str, Tensor)> = Vec::new();
        let mut acc = None;

        let main = match &heads {
            Heads::Fc(head) => {
                let logits = head.forward(&out.global)?;
                acc = Some(accuracy(&logits, &batch.positions)?);
                supervised_loss(head, &out.global, &batch.positions)?
            }
            Heads::Vae { mu, logvar, decoder } => {
                let m = mu.forward(&out.global)?;
                let lv = logvar.forward(&out.global)?;
                let noise = normal_tensor((n, gdim), &mut rng)?;
                let l = vae_loss(&m, &lv, &noise, decoder, &x, obj.effective_beta())?;
                parts.push(("recon", l.recon));
                parts.push(("kl", l.kl));
                l.total
            }
            Heads::Aae { code, decoder, disc, .. } => {
                let c = code.forward(&out.global)?;
                let prior = normal_tensor((n, gdim), &mut rng)?;
                let l = aae_losses(&c, &prior, decoder, disc, &x)?;
                if let Some(dopt) = disc_opt.as_mut() {
                    dopt.backward_step(&l.discriminator)?;
                }
                parts.push(("recon", l.recon.clone()));
                parts.push(("generator", l.generator.clone()));
                parts.push(("discriminator", l.discriminator));
                (l.recon + (l.generator * cfg.adversarial_weight)?)?
            }
            Heads::Infomax(proj) => match obj.kind {
                ObjectiveKind::Amdim => {
                    let g = proj.global(&out.global)?;
                    let l = proj.local(&out.local)?;
                    let (g1, g2) = (g.narrow(0, 0, n)?, g.narrow(0, n, n)?);
                    let (l1, l2) = (l.narrow(0, 0, n)?, l.narrow(0, n, n)?);
                    let plan = dim_pairing(n)?;
                    let a = infomax_loss(&score_tensor(&g1, &l2)?, &plan, estimator)?;
                    let b = infomax_loss(&score_tensor(&g2, &l1)?, &plan, estimator)?;
                    let bound = ((a.bound + b.bound)? * 0.5)?;
                    parts.push(("bound", bound.clone()));
                    bound.neg()?
                }
                _ => {
                    let plan = if obj.kind == ObjectiveKind::Cmdim {
                        cmdim_pairing(&batch.labels, obj.match_prob, &mut rng)?
                    } else {
                        dim_pairing(n)?
                    };
                    let pos: Vec<u32> = plan.positive.iter().map(|&p| p as u32).collect();
                    let pos = Tensor::from_vec(pos, n, &Device::Cpu)?;
                    let g = proj.global(&out.global)?.index_select(&pos, 0)?;
                    let l = proj.local(&out.local)?;
                    let terms = infomax_loss(&score_tensor(&g, &l)?, &plan, estimator)?;
                    parts.push(("bound", terms.bound));
                    terms.loss
                }
            },
            Heads::Proto(head) => {
                let mut present = batch.labels.clone();
                present.sort_unstable();
                present.dedup();
                let target: Vec<usize> = batch
                    .labels
                    .iter()
                    .map(|l| present.binary_search(l).expect("present"))
                    .collect();
                let rows = attr_f32.select(ndarray::Axis(0), &present);
                let attrs = Tensor::from_vec(rows.iter().copied().collect(), rows.dim(), &Device::Cpu)?;
                let logits = head.logits(&out.global, &attrs)?;
                acc = Some(accuracy(&logits, &target)?);
                cross_entropy(&logits, &target)?
            }
        };

        let total = match (&local_head, obj.local_loss) {
            (Some(head), kind) => {
                let local = if obj.kind == ObjectiveKind::Amdim {
                    out.local.narrow(0, 0, n)?
                } else {
                    out.local.clone()
                };
                let target = match kind {
                    LocalLoss::Ac => {
                        let rows = ac_targets.select(ndarray::Axis(0), &batch.labels);
                        LocalTarget::Attributes(Tensor::from_vec(
                            rows.iter().copied().collect(),
                            rows.dim(),
                            &Device::Cpu,
                        )?)
                    }
                    _ => LocalTarget::Labels(batch.positions.clone()),
                };
                let aux = local_aux_loss(&local, head, &target)?;
                parts.push(("local", aux.clone()));
                parts.push(("main", main.clone()));
                (main + (aux * obj.local_loss_weight)?)?
            }
            (None, _) => main,
        };

        let value = scalar(&total)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                name: obj.kind.as_str().into(),
                step,
                value,
            });
        }
        opt.backward_step(&total)?;

        if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
            log.push(step, "loss", value);
            for (name, t) in &parts {
                log.push(step, name, scalar(t)?);
            }
            if let Some(a) = acc {
                log.push(step, "accuracy", a);
            }
            log::debug!("{} step {step}: loss {value:.5}", obj.label());
        }
    }

    let mut provenance = Provenance::new(obj.kind.as_str(), data.name.clone(), cfg.steps);
    let s = &mut provenance.settings;
    s.insert("objective".into(), obj.label());
    s.insert("lr".into(), cfg.lr.to_string());
    s.insert("batch_size".into(), cfg.batch_size.to_string());
    s.insert("seed".into(), cfg.seed.to_string());
    s.insert("local_loss".into(), obj.local_loss.as_str().into());
    s.insert("local_loss_weight".into(), obj.local_loss_weight.to_string());
    s.insert("estimator".into(), estimator.as_str().into());
    s.insert("beta".into(), obj.effective_beta().to_string());
    s.insert("match_prob".into(), obj.match_prob.to_string());
    s.insert("resize".into(), pp.resize.to_string());
    s.insert("crop".into(), pp.crop.to_string());
    s.insert("pixel_range".into(), "[-1, 1]".into());
    Ok(TrainedEncoder {
        encoder,
        provenance,
        log,
    })
}

/// Encoder trained jointly with the prototypical objective on the train
/// classes.
pub fn pn_end_to_end(spec: &EncoderSpec, cfg: &TrainConfig, data: &DatasetBundle) -> Result<TrainedEncoder> {
    let mut cfg = cfg.clone();
    cfg.objective.kind = ObjectiveKind::Pn;
    train_encoder(spec, &cfg, data)
}
