mod common;

use ndarray::Array2;
use nlst_core::chaos::NeuronConfig;
use nlst_core::classifiers::{ClassifierKind, ClassifierSpec};
use nlst_core::eval::{gain_percent, kfold_cv, macro_f1, stratified_folds, tune_q};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute_macro_f1;

#[test]
fn hand_fixture() {
    let r = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
    assert!((r.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((r.per_class_f1[1] - 0.8).abs() < 1e-15);
    assert!((r.macro_f1 - 0.7333).abs() < 1e-4);
}

#[test]
fn randomized_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..80);
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let got = macro_f1(&t, &p, c).unwrap().macro_f1;
        assert!((got - brute_macro_f1(&t, &p, c)).abs() < 1e-12);
    }
}

#[test]
fn gain_anchors() {
    assert!((gain_percent(0.4812, 0.1667).unwrap() - 188.66).abs() < 0.01);
    assert!((gain_percent(0.6005, 0.2853).unwrap() - 110.48).abs() < 0.01);
}

#[test]
fn tuning_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array2::from_shape_fn((30, 2), |_| rng.random::<f64>());
    let y: Vec<usize> = (0..30).map(|i| i % 2).collect();
    let spec = ClassifierSpec::default_for(ClassifierKind::GaussianNb, 0);
    let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    let tpl = NeuronConfig::with_q(0.5).unwrap();
    let a = tune_q(x.view(), &y, 2, &grid, &tpl, &spec, 5).unwrap();
    let b = tune_q(x.view(), &y, 2, &grid, &tpl, &spec, 5).unwrap();
    assert_eq!(a, b);
    assert!(grid.contains(&a.best_q));
    let best = a
        .mean_cv_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_score, best);
}

#[test]
fn kfold_perfect_on_separated_data() {
    let x = Array2::from_shape_fn((20, 1), |(i, _)| {
        if i % 2 == 0 {
            0.01 * i as f64
        } else {
            10.0 + i as f64
        }
    });
    let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let spec = ClassifierSpec::default_for(ClassifierKind::GaussianNb, 0);
    assert_eq!(kfold_cv(x.view(), &y, 2, 5, &spec, 1).unwrap(), 1.0);
}

fn labels(c: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(move |n| {
        (
            prop::collection::vec(0..c, n),
            prop::collection::vec(0..c, n),
        )
    })
}

proptest! {
    #[test]
    fn relabeling_invariance((t, p) in labels(4), shift in 1usize..4) {
        let perm = |v: &Vec<usize>| v.iter().map(|c| (c + shift) % 4).collect::<Vec<_>>();
        let a = macro_f1(&t, &p, 4).unwrap().macro_f1;
        let b = macro_f1(&perm(&t), &perm(&p), 4).unwrap().macro_f1;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn binary_balanced_symmetric_is_accuracy(diag in 1usize..20, off in 0usize..10) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        for (a, b, k) in [(0, 0, diag), (1, 1, diag), (0, 1, off), (1, 0, off)] {
            t.extend(std::iter::repeat_n(a, k));
            p.extend(std::iter::repeat_n(b, k));
        }
        let acc = (2 * diag) as f64 / t.len() as f64;
        prop_assert!((macro_f1(&t, &p, 2).unwrap().macro_f1 - acc).abs() < 1e-12);
    }

    #[test]
    fn gain_sign(a in 0.0f64..1.0, b in 0.001f64..1.0) {
        let g = gain_percent(a, b).unwrap();
        prop_assert_eq!(g > 0.0, a > b);
    }

    #[test]
    fn folds_partition(y in prop::collection::vec(0usize..3, 10..60), k in 2usize..6, seed in any::<u64>()) {
        let counts: Vec<usize> = (0..3).map(|c| y.iter().filter(|&&v| v == c).count()).collect();
        prop_assume!(counts.iter().all(|&n| n != 1));
        let folds = stratified_folds(&y, 3, k, seed).unwrap();
        let mut all = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
