#![allow(dead_code)]
//! Fixtures shared by the oracle tests and the acceptance runner.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use zsl_core::compositionality::TreData;
use zsl_core::mi::MineConfig;

pub const RHO: f64 = 0.9;

/// Unit-variance pairs with correlation `RHO`.
pub fn correlated(n: usize, seed: u64) -> (Array2<f32>, Array2<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 1));
    let mut y = Array2::zeros((n, 1));
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = a as f32;
        y[[i, 0]] = (RHO * a + (1.0 - RHO * RHO).sqrt() * b) as f32;
    }
    (x, y)
}

/// Settings under which the statistics network recovers the analytic value.
pub fn mine_config() -> MineConfig {
    MineConfig {
        hidden: 128,
        steps: 3000,
        batch_size: 512,
        lr: 1e-3,
        seed: 7,
    }
}

pub struct Fixture {
    pub attrs: Array2<bool>,
    pub train: Array2<f64>,
    pub train_labels: Vec<usize>,
    pub test: Array2<f64>,
    pub test_labels: Vec<usize>,
}

/// 24 classes over 8 attributes, 4 points per class; classes 0..18 train.
pub fn fixture(exact: bool, seed: u64) -> Fixture {
    let (k, a, dim, per) = (24, 8, 16, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs = Array2::from_elem((k, a), false);
    for mut row in attrs.rows_mut() {
        while !row.iter().any(|&v| v) {
            row.iter_mut().for_each(|v| *v = rng.random_bool(0.4));
        }
    }
    let eta: Array2<f64> = Array2::from_shape_fn((a, dim), |_| StandardNormal.sample(&mut rng));
    let point = |c: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        if exact {
            (0..dim)
                .map(|j| (0..a).filter(|&i| attrs[[c, i]]).map(|i| eta[[i, j]]).sum())
                .collect()
        } else {
            (0..dim).map(|_| StandardNormal.sample(rng)).collect()
        }
    };
    let mut split = |classes: std::ops::Range<usize>| {
        let labels: Vec<usize> = classes.flat_map(|c| std::iter::repeat_n(c, per)).collect();
        let rows: Vec<f64> = labels.iter().flat_map(|&c| point(c, &mut rng)).collect();
        (Array2::from_shape_vec((labels.len(), dim), rows).unwrap(), labels)
    };
    let (train, train_labels) = split(0..18);
    let (test, test_labels) = split(18..24);
    Fixture {
        attrs,
        train,
        train_labels,
        test,
        test_labels,
    }
}

pub fn data(f: &Fixture) -> TreData<'_> {
    TreData {
        train: &f.train,
        train_labels: &f.train_labels,
        test: &f.test,
        test_labels: &f.test_labels,
    }
}
