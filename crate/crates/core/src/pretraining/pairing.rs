use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Positive source and negative set for every anchor of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingPlan {
    pub positive: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
    pub intra_class: Vec<bool>,
}

impl PairingPlan {
    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }

    /// Row-major `[N, N]` indicator of `j` being a negative of anchor `i`.
    pub fn negative_mask(&self) -> Vec<f32> {
        let n = self.len();
        let mut m = vec![0f32; n * n];
        for (i, negs) in self.negatives.iter().enumerate() {
            for &j in negs {
                m[i * n + j] = 1.0;
            }
        }
        m
    }

    pub fn intra_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.intra_class.iter().filter(|&&b| b).count() as f64 / self.len() as f64
    }
}

/// Self-positives with every other input as a negative.
pub fn dim_pairing(n: usize) -> Result<PairingPlan> {
    if n < 2 {
        return Err(Error::Degenerate("infomax pairing needs at least two inputs".into()));
    }
    Ok(PairingPlan {
        positive: (0..n).collect(),
        negatives: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        intra_class: vec![false; n],
    })
}

/// With probability `p` each anchor takes a uniformly drawn other member of
/// its class as positive source, otherwise itself; anchors whose class has a
/// single batch member always pair with themselves. Negatives are the inputs
/// of other classes.
pub fn cmdim_pairing<R: Rng + ?Sized>(labels: &[usize], p: f64, rng: &mut R) -> Result<PairingPlan> {
    if labels.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("match probability {p} outside [0, 1]")));
    }
    let n = labels.len();
    let mut positive = Vec::with_capacity(n);
    let mut intra = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n);
    let mut siblings: Vec<usize> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        siblings.clear();
        siblings.extend((0..n).filter(|&j| j != i && labels[j] == l));
        let draw = rng.random_bool(p);
        match siblings.choose(rng) {
            Some(&j) if draw => {
                positive.push(j);
                intra.push(true);
            }
            _ => {
                positive.push(i);
                intra.push(false);
            }
        }
        negatives.push((0..n).filter(|&j| labels[j] != l).collect());
    }
    Ok(PairingPlan {
        positive,
        negatives,
        intra_class: intra,
    })
}
