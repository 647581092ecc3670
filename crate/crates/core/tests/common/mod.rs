//! Reference implementations the library is checked against.
#![allow(dead_code)]

use ndarray::{Array2, Axis};
use nlst_core::chaos::skew_tent_step;
use nlst_core::classifiers::{ClassifierKind, ClassifierSpec};
use nlst_core::selftrain::{pseudo_label_selection, self_train, STConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Record every visited state until the first one strictly inside the
/// `eps`-ball around `x`. Returns the full trace and the stopping index.
pub fn naive_trace(
    q: f64,
    x: f64,
    b: f64,
    eps: f64,
    max_iters: usize,
) -> Option<(Vec<f64>, usize)> {
    let mut states = vec![q];
    loop {
        let n = states.len() - 1;
        let y = states[n];
        if (y - x).abs() < eps {
            states.pop();
            return Some((states, n));
        }
        if n == max_iters {
            return None;
        }
        states.push(skew_tent_step(y, b).unwrap());
    }
}

/// `(firing_time, firing_rate)` computed from the recorded trace.
pub fn naive_fire(q: f64, x: f64, b: f64, eps: f64, max_iters: usize) -> Option<(usize, f64)> {
    let (trace, n) = naive_trace(q, x, b, eps, max_iters)?;
    let above = trace.iter().filter(|&&y| y > b).count();
    let rate = if trace.is_empty() {
        0.0
    } else {
        above as f64 / trace.len() as f64
    };
    Some((n, rate))
}

/// Per-class precision and recall, F1 as their harmonic mean, then the mean.
pub fn brute_macro_f1(t: &[usize], p: &[usize], n_classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..n_classes {
        let tp = t
            .iter()
            .zip(p)
            .filter(|(a, b)| **a == c && **b == c)
            .count() as f64;
        let predicted = p.iter().filter(|&&b| b == c).count() as f64;
        let actual = t.iter().filter(|&&a| a == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        total += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    total / n_classes as f64
}

/// Gaussian naive Bayes posterior from per-class log densities.
/// Variances are population variances plus `1e-9` times the largest
/// population variance of any training column.
pub fn bayes_posterior(x: &[Vec<f64>], y: &[usize], n_classes: usize, query: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let d = query.len();
    let var = |vals: &[f64]| {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (
            m,
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64,
        )
    };
    let mut largest = 0.0f64;
    for j in 0..d {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        largest = largest.max(var(&col).1);
    }
    let smoothing = 1e-9 * if largest > 0.0 { largest } else { 1.0 };

    let mut log_joint = vec![0.0; n_classes];
    for (c, slot) in log_joint.iter_mut().enumerate() {
        let members: Vec<&Vec<f64>> = x
            .iter()
            .zip(y)
            .filter(|(_, &k)| k == c)
            .map(|(r, _)| r)
            .collect();
        let mut l = (members.len() as f64 / n).ln();
        for j in 0..d {
            let col: Vec<f64> = members.iter().map(|r| r[j]).collect();
            let (m, v) = var(&col);
            let v = v + smoothing;
            l += -(query[j] - m).powi(2) / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
        }
        *slot = l;
    }
    // p_c = 1 / sum_k exp(l_k - l_c), which survives densities that underflow.
    log_joint
        .iter()
        .map(|lc| 1.0 / log_joint.iter().map(|lk| (lk - lc).exp()).sum::<f64>())
        .collect()
}

/// One simulated self-training round: `(accepted U positions, labels)`.
pub type OracleRound = (Vec<usize>, Vec<usize>);

/// Exhaustive simulation of the threshold loop over 1-D data with the Bayes
/// oracle as base model. Returns the rounds and the number of fits.
pub fn simulate_gnb_self_training(
    lx: &[f64],
    ly: &[usize],
    ux: &[f64],
    n_classes: usize,
    threshold: f64,
) -> (Vec<OracleRound>, usize) {
    let mut lx: Vec<Vec<f64>> = lx.iter().map(|&v| vec![v]).collect();
    let mut ly = ly.to_vec();
    let mut remaining: Vec<usize> = (0..ux.len()).collect();
    let mut rounds = Vec::new();
    let mut fits = 0;
    loop {
        fits += 1;
        if remaining.is_empty() {
            break;
        }
        let mut round = (Vec::new(), Vec::new());
        for &u in &remaining {
            let post = bayes_posterior(&lx, &ly, n_classes, &[ux[u]]);
            let (best, p) = post
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (c, &p)| if p > acc.1 { (c, p) } else { acc },
                );
            if p >= threshold {
                round.0.push(u);
                round.1.push(best);
            }
        }
        let done = round.0.is_empty();
        for (&u, &c) in round.0.iter().zip(&round.1) {
            lx.push(vec![ux[u]]);
            ly.push(c);
        }
        remaining.retain(|u| !round.0.contains(u));
        rounds.push(round);
        if done {
            break;
        }
    }
    (rounds, fits)
}

/// Random small self-training problem: `(lx, ly, ux, n_classes)` with every
/// class present in the labeled part and at most 60 rows overall.
pub fn random_instance(seed: u64) -> (Array2<f64>, Vec<usize>, Array2<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(2..5);
    let d = rng.random_range(1..4);
    let n_l = rng.random_range(c..=c + 8);
    let n_u = rng.random_range(0..=60 - n_l);
    let centres: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.random()).collect())
        .collect();
    let spread: f64 = rng.random_range(0.02..0.4);
    let draw = |k: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        centres[k]
            .iter()
            .map(|m| m + rng.random_range(-spread..spread))
            .collect()
    };
    let ly: Vec<usize> = (0..n_l)
        .map(|i| if i < c { i } else { rng.random_range(0..c) })
        .collect();
    let lx: Vec<f64> = ly.iter().flat_map(|&k| draw(k, &mut rng)).collect();
    let ux: Vec<f64> = (0..n_u)
        .flat_map(|_| {
            let k = rng.random_range(0..c);
            draw(k, &mut rng)
        })
        .collect();
    (
        Array2::from_shape_vec((n_l, d), lx).unwrap(),
        ly,
        Array2::from_shape_vec((n_u, d), ux).unwrap(),
        c,
    )
}

/// Run the loop on one random instance and check termination, monotone
/// growth, conservation and that each round's pseudo-labels are what a fresh
/// model fitted on that round's labeled set predicts.
pub fn check_self_training_instance(seed: u64, kind: ClassifierKind) -> Result<(), String> {
    let (lx, ly, ux, c) = random_instance(seed);
    let threshold = [0.5, 0.75, 0.9, 1.0][(seed % 4) as usize];
    let cfg = STConfig {
        confidence_threshold: threshold,
        max_rounds: None,
    };
    let spec = ClassifierSpec::default_for(kind, seed);
    let out = self_train(|| spec.build(), lx.view(), &ly, ux.view(), c, &cfg)
        .map_err(|e| e.to_string())?;
    let audit = &out.audit;
    let (n_l, n_u) = (ly.len(), ux.nrows());

    if audit.fits > n_u + 1 || audit.rounds.len() > n_u + 1 {
        return Err(format!("{} fits for |U| = {n_u}", audit.fits));
    }
    let mut expected = n_l;
    let mut seen = vec![false; n_u];
    let mut cur_x = lx.clone();
    let mut cur_y = ly.clone();
    for r in &audit.rounds {
        if r.labeled_before != expected {
            return Err(format!(
                "round {}: |L| = {} expected {expected}",
                r.round, r.labeled_before
            ));
        }
        if r.accepted != r.accepted_indices.len() || r.accepted != r.pseudo_labels.len() {
            return Err(format!("round {}: inconsistent counts", r.round));
        }
        let mut model = spec.build().unwrap();
        model.fit(cur_x.view(), &cur_y, c).unwrap();
        let pool: Vec<usize> = (0..n_u).filter(|&i| !seen[i]).collect();
        let proba = model
            .predict_proba(ux.select(Axis(0), &pool).view())
            .unwrap();
        let sel = pseudo_label_selection(proba.view(), threshold);
        let want: Vec<usize> = sel.indices.iter().map(|&i| pool[i]).collect();
        if want != r.accepted_indices || sel.labels != r.pseudo_labels {
            return Err(format!("round {}: selection does not re-check", r.round));
        }
        for &i in &r.accepted_indices {
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("row {i} accepted twice"));
            }
        }
        cur_x = ndarray::concatenate![Axis(0), cur_x, ux.select(Axis(0), &r.accepted_indices)];
        cur_y.extend_from_slice(&r.pseudo_labels);
        expected += r.accepted;
    }
    let moved = audit.total_accepted();
    if out.labeled_y.len() != n_l + moved || out.labeled_y.len() + (n_u - moved) != n_l + n_u {
        return Err("conservation violated".into());
    }
    if out.labeled_y != cur_y || out.labeled_x != cur_x {
        return Err("final labeled set differs from the replayed one".into());
    }
    Ok(())
}
