//! Glue from a configuration to trained encoders, frozen features and
//! measured metrics.

use std::time::Instant;

use candle_core::DType;
use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{data_root, ExperimentConfig, DATA_ROOT_ENV, SYNTHETIC};
use super::records::{run_id, RunRecord, CODE_VERSION};
use super::report::{local_metric, METRIC_PARTS_F1, METRIC_TRE_RATIO, METRIC_ZSL};
use crate::compositionality::{binarize_attributes, tre_ratio, TreData, TreReport};
use crate::datasets::{generate_synthetic, load_zsl_dataset, preprocess, DatasetBundle, Mode, PreprocessConfig, Preprocessed};
use crate::encoders::{receptive_field, Encoder, FeatureBundle, FrozenEncoder, Tap};
use crate::error::{Error, Result};
use crate::pretraining::{train_encoder, ObjectiveConfig, TrainedEncoder};
use crate::probes::{parts_f1, project_crop_maps, train_part_probes, PartsF1};
use crate::zsl::{evaluate_zsl, pool_variant_eval, AggregateMode, FeatureView, PoolEvalData, PoolVariant, ZslResult};

/// The configured dataset: generated for `synthetic`, otherwise read from
/// the directory named by the data-root variable.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<DatasetBundle> {
    if cfg.dataset == SYNTHETIC {
        let mut spec = cfg.synthetic.clone();
        spec.image_size = cfg.encoder.resize;
        return generate_synthetic(&spec);
    }
    let root = data_root().ok_or_else(|| Error::Config(format!("{DATA_ROOT_ENV} is not set")))?;
    load_zsl_dataset(&root, &cfg.dataset, cfg.encoder.resize)
}

/// Centre crops of `indices`.
pub fn eval_inputs(data: &DatasetBundle, indices: &[usize], pre: &PreprocessConfig) -> Vec<Preprocessed> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    indices
        .iter()
        .map(|&i| preprocess(&data.images[i], Mode::Eval, &mut rng, pre))
        .collect()
}

/// Frozen features and labels of both splits.
pub struct EncodedSplits {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub train_inputs: Vec<Preprocessed>,
    pub test_inputs: Vec<Preprocessed>,
    pub train: FeatureBundle,
    pub test: FeatureBundle,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
}

pub fn encode_splits(encoder: &FrozenEncoder, data: &DatasetBundle, pre: &PreprocessConfig) -> Result<EncodedSplits> {
    let train_idx = data.train_indices();
    let test_idx = data.test_indices();
    let train_inputs = eval_inputs(data, &train_idx, pre);
    let test_inputs = eval_inputs(data, &test_idx, pre);
    let train = encoder.encode(&train_inputs)?;
    let test = encoder.encode(&test_inputs)?;
    Ok(EncodedSplits {
        train_labels: train_idx.iter().map(|&i| data.labels[i]).collect(),
        test_labels: test_idx.iter().map(|&i| data.labels[i]).collect(),
        train_idx,
        test_idx,
        train_inputs,
        test_inputs,
        train,
        test,
    })
}

/// The configured encoder at its seeded initialisation, never trained.
pub fn random_encoder(cfg: &ExperimentConfig) -> Result<Encoder> {
    Encoder::new(cfg.encoder.spec()?, cfg.seed, DType::F32)
}

/// Trains the configured objective from its seed.
pub fn train_variant(cfg: &ExperimentConfig, objective: &ObjectiveConfig, data: &DatasetBundle) -> Result<TrainedEncoder> {
    let cfg = cfg.resolved();
    let mut train = cfg.train.clone();
    train.objective = objective.clone();
    train_encoder(&cfg.encoder.spec()?, &train, data)
}

pub fn zsl_global(splits: &EncodedSplits, data: &DatasetBundle, cfg: &ExperimentConfig) -> Result<ZslResult> {
    evaluate_zsl(
        &splits.train,
        &splits.train_labels,
        &splits.test,
        &splits.test_labels,
        &data.attributes,
        &data.split.test,
        FeatureView::Global,
        &cfg.resolved().proto,
    )
}

/// Part maps of both splits on the local feature grid, `[N, P, H, W]`.
pub fn split_part_maps(
    encoder: &FrozenEncoder,
    splits: &EncodedSplits,
    data: &DatasetBundle,
    cfg: &ExperimentConfig,
) -> Result<(Array4<bool>, Array4<bool>)> {
    let parts = data
        .parts
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("{} has no part annotations", data.name)))?;
    let crop = cfg.resolved().train.preprocess.crop;
    let geometry = receptive_field(encoder.spec(), Tap::Block(encoder.spec().local_tap))?;
    Ok((
        project_crop_maps(parts, &splits.train_idx, &splits.train_inputs, crop, &geometry)?,
        project_crop_maps(parts, &splits.test_idx, &splits.test_inputs, crop, &geometry)?,
    ))
}

/// Parts-F1 on the test split of probes fitted on the train split.
pub fn locality(encoder: &FrozenEncoder, splits: &EncodedSplits, data: &DatasetBundle, cfg: &ExperimentConfig) -> Result<PartsF1> {
    let (train_maps, test_maps) = split_part_maps(encoder, splits, data, cfg)?;
    let cfg = cfg.resolved();
    let probes = train_part_probes(&splits.train, &train_maps, &cfg.probe)?;
    parts_f1(&probes, &splits.test, &test_maps, cfg.probe.threshold)
}

/// TRE ratio on the binarised class attributes (threshold from train classes).
pub fn compositionality(splits: &EncodedSplits, data: &DatasetBundle, cfg: &ExperimentConfig) -> Result<TreReport> {
    let cfg = cfg.resolved();
    let bin = binarize_attributes(&data.attributes, &data.split.train)?;
    let train: Array2<f64> = splits.train.global.mapv(f64::from);
    let test: Array2<f64> = splits.test.global.mapv(f64::from);
    let tre_data = TreData {
        train: &train,
        train_labels: &splits.train_labels,
        test: &test,
        test_labels: &splits.test_labels,
    };
    tre_ratio(&tre_data, &bin.matrix, &cfg.tre, cfg.tre_draws, cfg.seed)
}

/// Zero-shot accuracy of averaged local features under both aggregations,
/// read before and after the final pooling layer.
pub fn local_variants(encoder: &FrozenEncoder, splits: &EncodedSplits, data: &DatasetBundle, cfg: &ExperimentConfig) -> Result<Vec<(String, f64)>> {
    let cfg = cfg.resolved();
    let last = encoder.spec().conv.len() - 1;
    let mut out = Vec::new();
    for variant in [PoolVariant::PostPool, PoolVariant::PrePool] {
        let tap = match variant {
            PoolVariant::PrePool => Tap::PrePool(last),
            PoolVariant::PostPool => Tap::Block(last),
        };
        let train = encoder.encode_tap(&splits.train_inputs, tap)?;
        let test = encoder.encode_tap(&splits.test_inputs, tap)?;
        for mode in [AggregateMode::AverageRepresentations, AggregateMode::AveragePredictions] {
            let r = evaluate_zsl(
                &train,
                &splits.train_labels,
                &test,
                &splits.test_labels,
                &data.attributes,
                &data.split.test,
                FeatureView::Local(mode),
                &cfg.proto,
            )?;
            out.push((local_metric(mode.as_str(), variant == PoolVariant::PostPool), r.top1));
        }
    }
    Ok(out)
}

/// Pre- versus post-pool accuracy of the averaged final block.
pub fn pool_comparison(encoder: &FrozenEncoder, splits: &EncodedSplits, data: &DatasetBundle, cfg: &ExperimentConfig) -> Result<Vec<(PoolVariant, ZslResult, usize)>> {
    let cfg = cfg.resolved();
    let pd = PoolEvalData {
        train_inputs: &splits.train_inputs,
        train_labels: &splits.train_labels,
        test_inputs: &splits.test_inputs,
        test_labels: &splits.test_labels,
        attributes: &data.attributes,
        test_classes: &data.split.test,
    };
    [PoolVariant::PrePool, PoolVariant::PostPool]
        .into_iter()
        .map(|v| pool_variant_eval(encoder, v, &pd, &cfg.proto).map(|(r, g)| (v, r, g.receptive_field)))
        .collect()
}

/// Records sharing one run's identity.
pub struct RecordBuilder {
    base: RunRecord,
    started: Instant,
}

impl RecordBuilder {
    pub fn new(cfg: &ExperimentConfig, objective: &ObjectiveConfig) -> Result<Self> {
        let mut c = cfg.clone();
        c.train.objective = objective.clone();
        let fingerprint = c.fingerprint()?;
        Ok(Self {
            base: RunRecord {
                run_id: run_id(&fingerprint),
                fingerprint,
                dataset: cfg.dataset.clone(),
                objective: objective.model_label(),
                encoder: cfg.encoder.family.as_str().into(),
                local_loss: objective.local_loss.as_str().into(),
                seed: cfg.seed,
                metric: String::new(),
                value: 0.0,
                wall_time: 0.0,
                code_version: CODE_VERSION.into(),
            },
            started: Instant::now(),
        })
    }

    /// Replaces the objective column, for encoders not produced by an
    /// objective such as the untrained baseline.
    pub fn relabel(mut self, objective: &str) -> Self {
        self.base.objective = objective.into();
        self
    }

    pub fn record(&self, metric: &str, value: f64) -> RunRecord {
        RunRecord {
            metric: metric.into(),
            value,
            wall_time: self.started.elapsed().as_secs_f64(),
            ..self.base.clone()
        }
    }

    pub fn zsl(&self, r: &ZslResult) -> RunRecord {
        self.record(METRIC_ZSL, r.top1)
    }

    pub fn parts(&self, f: &PartsF1) -> RunRecord {
        self.record(METRIC_PARTS_F1, f.mean)
    }

    pub fn tre(&self, t: &TreReport) -> RunRecord {
        self.record(METRIC_TRE_RATIO, t.ratio)
    }
}
