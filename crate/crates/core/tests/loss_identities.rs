mod common;

use common::loss_oracle as oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumor_retrieval::train::{classification_loss, dice_ce_loss, multi_positive_infonce};

fn unit_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

#[test]
fn singleton_positives_reduce_to_standard_infonce() {
    for seed in 0..20 {
        let z = unit_vectors(16, 12, seed);
        let ids: Vec<usize> = (0..16).map(|i| i / 2).collect();
        let (l, _) = multi_positive_infonce(&z, &ids, 0.07).unwrap();
        assert!((l - oracle::paired_infonce(&z, 0.07)).abs() <= 1e-7, "seed {seed}");
    }
}

#[test]
fn perfect_mask_prediction_has_near_zero_loss() {
    let target: Vec<u8> = (0..4096).map(|i| ((i / 16) % 3 == 0) as u8).collect();
    let logits: Vec<f64> = target.iter().map(|&t| if t == 1 { 20.0 } else { -20.0 }).collect();
    assert!(dice_ce_loss(&logits, &target).unwrap().0 <= 1e-3);
}

#[test]
fn infonce_gradient_matches_oracle_differences() {
    let z = unit_vectors(10, 6, 3);
    let ids = [0, 0, 0, 1, 1, 2, 2, 2, 3, 4];
    let (_, g) = multi_positive_infonce(&z, &ids, 0.1).unwrap();
    let h = 1e-6;
    for i in 0..z.len() {
        for k in 0..6 {
            let mut p = z.clone();
            p[i][k] += h;
            let mut m = z.clone();
            m[i][k] -= h;
            let fd = (oracle::multi_positive_infonce(&p, &ids, 0.1) - oracle::multi_positive_infonce(&m, &ids, 0.1)) / (2.0 * h);
            assert!((fd - g[i][k]).abs() < 1e-6, "{i},{k}: {fd} vs {}", g[i][k]);
        }
    }
}

#[test]
fn dice_ce_gradient_matches_oracle_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
    let target: Vec<u8> = (0..40).map(|_| rng.random_bool(0.4) as u8).collect();
    let (_, g) = dice_ce_loss(&logits, &target).unwrap();
    let h = 1e-6;
    for i in 0..logits.len() {
        let mut p = logits.clone();
        p[i] += h;
        let mut m = logits.clone();
        m[i] -= h;
        let fd = (oracle::dice_ce(&p, &target) - oracle::dice_ce(&m, &target)) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn infonce_matches_oracle(seed in 0u64..10_000, extra in 0usize..12, groups in 2usize..6, tau in 0.05f64..1.0) {
        let n = 2 * groups + extra;
        let z = unit_vectors(n, 8, seed);
        let ids: Vec<usize> = (0..n).map(|i| i % groups).collect();
        let (l, _) = multi_positive_infonce(&z, &ids, tau).unwrap();
        let o = oracle::multi_positive_infonce(&z, &ids, tau);
        prop_assert!((l - o).abs() <= 1e-9 * o.abs().max(1.0), "{} vs {}", l, o);
    }

    #[test]
    fn dice_ce_matches_oracle(logits in proptest::collection::vec(-8.0f64..8.0, 1..300), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<u8> = logits.iter().map(|_| rng.random_bool(0.3) as u8).collect();
        let (l, _) = dice_ce_loss(&logits, &target).unwrap();
        prop_assert!((l - oracle::dice_ce(&logits, &target)).abs() <= 1e-9);
    }

    #[test]
    fn cross_entropy_matches_oracle(logits in proptest::collection::vec(-10.0f64..10.0, 2..8), pick in 0usize..100) {
        let y = pick % logits.len();
        let (l, _) = classification_loss(&logits, Some(y)).unwrap();
        prop_assert!((l - oracle::cross_entropy(&logits, y)).abs() <= 1e-9);
    }
}
