use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::protonet::{fit_protonet, ProtoConfig, ProtoModel};
use crate::datasets::Preprocessed;
use crate::encoders::{receptive_field, FeatureBundle, FeatureGeometry, FrozenEncoder, Tap};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZslResult {
    pub top1: f64,
    /// `(class, accuracy)` for every evaluated class, ascending class order.
    pub per_class_accuracy: Vec<(usize, f64)>,
    pub predictions: Vec<usize>,
    pub fingerprint: String,
}

impl ZslResult {
    pub fn from_predictions(predictions: Vec<usize>, labels: &[usize], classes: &[usize]) -> Self {
        let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        let top1 = if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        };
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        let per_class_accuracy = classes
            .iter()
            .map(|&c| {
                let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                let acc = if idx.is_empty() {
                    0.0
                } else {
                    idx.iter().filter(|&&i| predictions[i] == c).count() as f64 / idx.len() as f64
                };
                (c, acc)
            })
            .collect();
        Self {
            top1,
            per_class_accuracy,
            predictions,
            fingerprint: String::new(),
        }
    }

    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = fingerprint.into();
        self
    }

    /// `class<TAB>accuracy` lines.
    pub fn per_class_tsv(&self) -> String {
        let mut s = String::from("class\taccuracy\n");
        for (c, a) in &self.per_class_accuracy {
            s.push_str(&format!("{c}\t{a:.6}\n"));
        }
        s
    }
}

fn sorted_classes(classes: &[usize]) -> Result<Vec<usize>> {
    if classes.is_empty() {
        return Err(Error::Degenerate("no candidate classes".into()));
    }
    let mut c = classes.to_vec();
    c.sort_unstable();
    c.dedup();
    Ok(c)
}

/// Index of the smallest entry; the first one wins ties.
fn argmin(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = k;
        }
    }
    best
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Nearest embedded class prototype among `classes`, ties to the lowest
/// class index.
pub fn predict_zsl(
    model: &ProtoModel,
    x: &Array2<f32>,
    labels: &[usize],
    attributes: &Array2<f64>,
    classes: &[usize],
) -> Result<ZslResult> {
    let classes = sorted_classes(classes)?;
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", x.nrows(), labels.len())));
    }
    let d = model.distances(x, attributes, &classes)?;
    let predictions = d.rows().into_iter().map(|r| classes[argmin(r)]).collect();
    Ok(ZslResult::from_predictions(predictions, labels, &classes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    /// Average the local vectors, then classify once.
    AverageRepresentations,
    /// Classify every cell and average the class probabilities.
    AveragePredictions,
}

impl AggregateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregateMode::AverageRepresentations => "average_representations",
            AggregateMode::AveragePredictions => "average_predictions",
        }
    }
}

fn softmax_neg(d: ndarray::ArrayView1<'_, f64>) -> Vec<f64> {
    let m = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = d.iter().map(|v| (m - v).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean local vector of each image, `[N, C]`.
pub fn local_means(local: &Array4<f32>) -> Array2<f32> {
    let (n, h, w, c) = local.dim();
    local
        .to_shape((n, h * w, c))
        .expect("contiguous")
        .mean_axis(Axis(1))
        .expect("non-empty grid")
}

/// Every cell as a row, `[N * H * W, C]`.
pub fn local_cells(local: &Array4<f32>) -> Array2<f32> {
    let (n, h, w, c) = local.dim();
    local.to_shape((n * h * w, c)).expect("contiguous").to_owned()
}

/// Class probabilities `[N, K]` from a local grid `[N, H, W, C]`.
pub fn aggregate_local(
    model: &ProtoModel,
    local: &Array4<f32>,
    mode: AggregateMode,
    attributes: &Array2<f64>,
    classes: &[usize],
) -> Result<Array2<f64>> {
    let (n, h, w, _) = local.dim();
    let k = classes.len();
    let mut out = Array2::zeros((n, k));
    match mode {
        AggregateMode::AverageRepresentations => {
            let d = model.distances(&local_means(local), attributes, classes)?;
            for (i, row) in d.rows().into_iter().enumerate() {
                for (j, p) in softmax_neg(row).into_iter().enumerate() {
                    out[[i, j]] = p;
                }
            }
        }
        AggregateMode::AveragePredictions => {
            let cells = h * w;
            let d = model.distances(&local_cells(local), attributes, classes)?;
            for (r, row) in d.rows().into_iter().enumerate() {
                for (j, p) in softmax_neg(row).into_iter().enumerate() {
                    out[[r / cells, j]] += p;
                }
            }
            out /= cells as f64;
        }
    }
    Ok(out)
}

/// Highest-scoring class per row, ties to the lowest class index.
pub fn predict_from_scores(scores: &Array2<f64>, classes: &[usize]) -> Vec<usize> {
    scores.rows().into_iter().map(|r| classes[argmax(r)]).collect()
}

/// Which representation a zero-shot evaluation reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureView {
    Global,
    Local(AggregateMode),
}

impl FeatureView {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureView::Global => "global",
            FeatureView::Local(m) => m.as_str(),
        }
    }
}

/// Fits a prototypical network on `train` and evaluates on `test` over the
/// test classes.
pub fn evaluate_zsl(
    train: &FeatureBundle,
    train_labels: &[usize],
    test: &FeatureBundle,
    test_labels: &[usize],
    attributes: &Array2<f64>,
    test_classes: &[usize],
    view: FeatureView,
    cfg: &ProtoConfig,
) -> Result<ZslResult> {
    train.ensure_frozen()?;
    test.ensure_frozen()?;
    let classes = sorted_classes(test_classes)?;
    if let Some(c) = train_labels.iter().find(|l| classes.binary_search(l).is_ok()) {
        return Err(Error::Dataset(format!("class {c} is both seen and unseen")));
    }
    match view {
        FeatureView::Global => {
            let model = fit_protonet(&train.global, &train.source, train_labels, attributes, cfg)?;
            predict_zsl(&model, &test.global, test_labels, attributes, &classes)
        }
        FeatureView::Local(mode) => {
            let model = match mode {
                AggregateMode::AverageRepresentations => {
                    fit_protonet(&local_means(&train.local), &train.source, train_labels, attributes, cfg)?
                }
                AggregateMode::AveragePredictions => {
                    let (_, h, w, _) = train.local.dim();
                    let cell_labels: Vec<usize> = train_labels
                        .iter()
                        .flat_map(|&l| std::iter::repeat_n(l, h * w))
                        .collect();
                    fit_protonet(&local_cells(&train.local), &train.source, &cell_labels, attributes, cfg)?
                }
            };
            let scores = aggregate_local(&model, &test.local, mode, attributes, &classes)?;
            Ok(ZslResult::from_predictions(
                predict_from_scores(&scores, &classes),
                test_labels,
                &classes,
            ))
        }
    }
}

/// Tap on either side of the final pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolVariant {
    PrePool,
    PostPool,
}

impl PoolVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolVariant::PrePool => "pre_pool",
            PoolVariant::PostPool => "post_pool",
        }
    }
}

pub struct PoolEvalData<'a> {
    pub train_inputs: &'a [Preprocessed],
    pub train_labels: &'a [usize],
    pub test_inputs: &'a [Preprocessed],
    pub test_labels: &'a [usize],
    pub attributes: &'a Array2<f64>,
    pub test_classes: &'a [usize],
}

/// Zero-shot accuracy of the averaged final-block map read before or after
/// its pooling layer, with the geometry of that tap.
pub fn pool_variant_eval(
    encoder: &FrozenEncoder,
    variant: PoolVariant,
    data: &PoolEvalData<'_>,
    cfg: &ProtoConfig,
) -> Result<(ZslResult, FeatureGeometry)> {
    let last = encoder.spec().conv.len() - 1;
    if !encoder.spec().has_pool(last) {
        return Err(Error::Config(format!(
            "{} encoder has no pooling after its final block",
            encoder.spec().family.as_str()
        )));
    }
    let tap = match variant {
        PoolVariant::PrePool => Tap::PrePool(last),
        PoolVariant::PostPool => Tap::Block(last),
    };
    let geometry = receptive_field(encoder.spec(), tap)?;
    let train = encoder.encode_tap(data.train_inputs, tap)?;
    let test = encoder.encode_tap(data.test_inputs, tap)?;
    let result = evaluate_zsl(
        &train,
        data.train_labels,
        &test,
        data.test_labels,
        data.attributes,
        data.test_classes,
        FeatureView::Local(AggregateMode::AverageRepresentations),
        cfg,
    )?;
    Ok((result, geometry))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_prefers_first_on_ties() {
        let a = ndarray::array![3.0, 1.0, 1.0, 2.0];
        assert_eq!(argmin(a.view()), 1);
        let b = ndarray::array![0.5, 0.5];
        assert_eq!(argmax(b.view()), 0);
    }

    #[test]
    fn result_from_predictions() {
        let r = ZslResult::from_predictions(vec![3, 4, 4, 3], &[3, 4, 3, 3], &[4, 3]);
        assert_eq!(r.top1, 0.75);
        assert_eq!(r.per_class_accuracy, vec![(3, 2.0 / 3.0), (4, 1.0)]);
        assert!(r.per_class_tsv().starts_with("class\taccuracy\n3\t0.666667"));
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalised() {
        let d = ndarray::array![1.0, 2.0, 5.0];
        let p = softmax_neg(d.view());
        let q = softmax_neg((&d + 100.0).view());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
