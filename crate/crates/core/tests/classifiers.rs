mod common;

use ndarray::{array, Array2, Axis};
use nlst_core::classifiers::{
    argmax_rows, AbParams, AdaBoost, ClassifierKind, ClassifierSpec, Gamma, GaussianNb, GnbParams,
    Hyperparameters, LogisticRegression, LrParams, MaxFeatures, ProbClassifier, RfParams,
    SupportVectorMachine, SvmParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::bayes_posterior;

fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = [[0.2, 0.2], [0.8, 0.3], [0.5, 0.85]];
    let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        centres[y[i]][j] + rng.random_range(-0.2..0.2)
    });
    (x, y)
}

fn fitted(
    kind: ClassifierKind,
    seed: u64,
    x: &Array2<f64>,
    y: &[usize],
) -> Box<dyn ProbClassifier> {
    let mut m = ClassifierSpec::default_for(kind, seed).build().unwrap();
    m.fit(x.view(), y, 3).unwrap();
    m
}

#[test]
fn interface_contract_all_kinds() {
    let (x, y) = blobs(45, 1);
    let (q, _) = blobs(20, 2);
    for kind in ClassifierKind::ALL {
        let m = fitted(kind, 7, &x, &y);
        let p = m.predict_proba(q.view()).unwrap();
        assert_eq!(p.dim(), (20, 3), "{kind}");
        for row in p.rows() {
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)), "{kind}");
            assert!((row.sum() - 1.0).abs() < 1e-9, "{kind}");
        }
        assert_eq!(
            m.predict(q.view()).unwrap(),
            argmax_rows(p.view()),
            "{kind}"
        );
        let again = fitted(kind, 7, &x, &y).predict_proba(q.view()).unwrap();
        assert_eq!(p, again, "{kind} not deterministic");
        assert!(m.predict_proba(array![[0.1]].view()).is_err(), "{kind}");
    }
}

#[test]
fn argmax_ties_go_low() {
    let p = array![[0.5, 0.5], [0.25, 0.375], [0.3, 0.3]];
    assert_eq!(argmax_rows(p.view()), vec![0, 1, 0]);
}

#[test]
fn invalid_fit_input_is_rejected() {
    let x = array![[0.0], [1.0]];
    for kind in ClassifierKind::ALL {
        let mut m = ClassifierSpec::default_for(kind, 0).build().unwrap();
        assert!(m.fit(x.view(), &[0, 5], 2).is_err(), "{kind}");
        assert!(m.fit(x.view(), &[0], 2).is_err(), "{kind}");
    }
}

#[test]
fn gnb_closed_form_one_dimensional() {
    let x = array![[0.0], [0.2], [0.7], [1.0]];
    let y = [0, 0, 1, 1];
    let mut m = GaussianNb::new(GnbParams::default());
    m.fit(x.view(), &y, 2).unwrap();
    let got = m.predict_proba(array![[0.4]].view()).unwrap();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let want = bayes_posterior(&rows, &y, 2, &[0.4]);
    for c in 0..2 {
        assert!((got[[0, c]] - want[c]).abs() < 1e-9);
    }
    // Class 0: mean 0.1, variance 0.01; class 1: mean 0.85, variance 0.0225.
    let d0 = (-(0.3f64).powi(2) / 0.02).exp() / 0.1;
    let d1 = (-(0.45f64).powi(2) / 0.045).exp() / 0.15;
    assert!((got[[0, 0]] - d0 / (d0 + d1)).abs() < 1e-6);
}

#[test]
fn gnb_closed_form_two_dimensional() {
    let (x, y) = blobs(30, 4);
    let (q, _) = blobs(10, 5);
    let mut m = GaussianNb::new(GnbParams::default());
    m.fit(x.view(), &y, 3).unwrap();
    let got = m.predict_proba(q.view()).unwrap();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    for (i, qr) in q.rows().into_iter().enumerate() {
        let want = bayes_posterior(&rows, &y, 3, &qr.to_vec());
        for c in 0..3 {
            assert!((got[[i, c]] - want[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn lr_cannot_solve_xor() {
    let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let y = [0, 0, 1, 1];
    for l2 in [0.0, 1e-3, 1.0] {
        let mut m = LogisticRegression::new(LrParams {
            l2,
            ..LrParams::default()
        });
        m.fit(x.view(), &y, 2).unwrap();
        let pred = m.predict(x.view()).unwrap();
        let hits = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(hits <= 3);
    }
}

#[test]
fn lr_loss_never_increases() {
    for seed in 0..5 {
        let (x, y) = blobs(40, seed);
        let mut m = LogisticRegression::new(LrParams::default());
        m.fit(x.view(), &y, 3).unwrap();
        let h = m.loss_history();
        assert!(h.len() >= 2);
        assert!(h.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {h:?}");
    }
}

#[test]
fn samme_first_weight_by_hand() {
    // Best Gini stump splits at 1.5; the right leaf ties between classes 1
    // and 2 and picks 1, misclassifying one of four points: err = 1/4,
    // alpha = ln(3/4 / 1/4) + ln(3 - 1) = ln 6.
    let x = array![[0.0], [1.0], [2.0], [3.0]];
    let y = [0, 0, 1, 2];
    let mut m = AdaBoost::new(AbParams {
        n_estimators: 1,
        learning_rate: 1.0,
    });
    m.fit_weighted(x.view(), &y, 3, &[1.0; 4]).unwrap();
    let (stump, alpha) = &m.estimators()[0];
    assert_eq!(stump.threshold, 1.5);
    assert!((alpha - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn trees_and_boosting_memorize_small_sets() {
    let x = Array2::from_shape_fn((16, 1), |(i, _)| i as f64 / 15.0);
    let y: Vec<usize> = [0, 0, 1, 1, 1, 0, 0, 2, 2, 1, 0, 0, 2, 1, 1, 0].to_vec();
    let specs = [
        Hyperparameters::Rf(RfParams {
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..RfParams::default()
        }),
        Hyperparameters::Ab(AbParams {
            n_estimators: 200,
            learning_rate: 1.0,
        }),
    ];
    for hp in specs {
        let mut m = ClassifierSpec::new(hp.clone(), 3).build().unwrap();
        m.fit(x.view(), &y, 3).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), y, "{hp:?}");
    }
}

#[test]
fn svm_duplicates_leave_decision_unchanged() {
    let params = SvmParams {
        c: 10.0,
        gamma: Gamma::Value(1.0),
        tol: 1e-10,
        ..SvmParams::default()
    };
    let x = array![[0.0], [1.0]];
    let xx = array![[0.0], [1.0], [0.0], [1.0]];
    let grid = Array2::from_shape_fn((11, 1), |(i, _)| i as f64 / 10.0);
    let mut a = SupportVectorMachine::new(params.clone());
    a.fit(x.view(), &[0, 1], 2).unwrap();
    let mut b = SupportVectorMachine::new(params);
    b.fit(xx.view(), &[0, 1, 0, 1], 2).unwrap();
    let (da, db) = (
        a.decision_function(grid.view()).unwrap(),
        b.decision_function(grid.view()).unwrap(),
    );
    for (u, v) in da.iter().zip(db.iter()) {
        assert!((u - v).abs() < 1e-6);
    }
}

#[test]
fn svm_vanishing_gamma_is_uninformative() {
    let (x, y) = blobs(24, 6);
    let y: Vec<usize> = y.iter().map(|&c| usize::from(c == 1)).collect();
    let ones = y.iter().filter(|&&c| c == 1).count();
    assert_eq!(ones * 3, y.len());
    let mut m = SupportVectorMachine::new(SvmParams {
        gamma: Gamma::Value(1e-300),
        ..SvmParams::default()
    });
    m.fit(x.view(), &y, 2).unwrap();
    let p = m.predict_proba(x.view()).unwrap();
    let first = p[[0, 1]];
    assert!(p.column(1).iter().all(|v| (v - first).abs() < 1e-9));
}

fn shuffled(x: &Array2<f64>, y: &[usize], seed: u64) -> (Array2<f64>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (
        x.select(Axis(0), &order),
        order.iter().map(|&i| y[i]).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn permutation_invariance(data_seed in 0u64..1000, perm_seed in any::<u64>()) {
        let (x, y) = blobs(30, data_seed);
        let (q, _) = blobs(12, data_seed + 1);
        let (xs, ys) = shuffled(&x, &y, perm_seed);
        for kind in ClassifierKind::ALL {
            let a = fitted(kind, 9, &x, &y).predict_proba(q.view()).unwrap();
            let b = fitted(kind, 9, &xs, &ys).predict_proba(q.view()).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                prop_assert!((u - v).abs() < 1e-9, "{}", kind);
            }
        }
    }

    #[test]
    fn rows_are_stochastic(data_seed in 0u64..1000, model_seed in any::<u64>()) {
        let (x, y) = blobs(24, data_seed);
        let q = Array2::from_shape_fn((8, 2), |(i, j)| (i * 7 + j * 3) as f64 / 10.0 - 0.5);
        for kind in ClassifierKind::ALL {
            let p = fitted(kind, model_seed, &x, &y).predict_proba(q.view()).unwrap();
            for row in p.rows() {
                prop_assert!(row.iter().all(|v| *v >= 0.0));
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
