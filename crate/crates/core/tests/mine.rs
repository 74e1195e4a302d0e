mod common;

use common::{correlated, mine_config, RHO};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zsl_core::mi::train_mine;

#[test]
fn gaussian_mutual_information_is_recovered() {
    let truth = -0.5 * (1.0 - RHO * RHO).ln();
    let (x, y) = correlated(20_000, 1);
    let (net, _) = train_mine(&x, &y, &mine_config()).unwrap();
    let (tx, ty) = correlated(50_000, 2);
    let est = net.bound(&tx, &ty, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    println!("estimate {est:.4} vs {truth:.4}");
    assert!((est - truth).abs() <= 0.15 * truth, "estimate {est}");
}

#[test]
fn shuffled_pairs_carry_no_information() {
    let (x, _) = correlated(20_000, 4);
    let (_, y) = correlated(20_000, 5);
    let (net, _) = train_mine(&x, &y, &mine_config()).unwrap();
    let (tx, _) = correlated(50_000, 6);
    let (_, ty) = correlated(50_000, 7);
    let est = net.bound(&tx, &ty, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    println!("shuffled estimate {est:.4}");
    assert!(est.abs() <= 0.05, "estimate {est}");
}
