//! Macro F1, relative gain, stratified k-fold CV and the q-grid tuner.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaos::{ChaosError, NeuronConfig};
use crate::classifiers::{ClassifierError, ClassifierSpec};
use crate::features::{self, FeatureError};
use crate::rng;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("gain is undefined when the baseline F1 is 0")]
    ZeroBaseline,
    #[error("cannot fold: {0}")]
    InfeasibleFolds(String),
    #[error("empty q grid")]
    EmptyGrid,
    #[error("q = {0} is outside (0, 1)")]
    InvalidQ(f64),
    #[error("every q in the grid failed; first failure: {0}")]
    AllFailed(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Chaos(#[from] ChaosError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[[t, p]]` counts samples of class `t` predicted as `p`.
    pub confusion: Array2<usize>,
}

/// Per-class F1 averaged over all `n_classes` classes. A class with no true
/// positives scores 0, including when it never occurs at all.
pub fn macro_f1(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
) -> Result<MetricReport, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let mut confusion = Array2::<usize>::zeros((n_classes, n_classes));
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&label) = [t, p].iter().find(|&&c| c >= n_classes) {
            return Err(EvalError::LabelOutOfRange { label, n_classes });
        }
        confusion[[t, p]] += 1;
    }
    let per_class_f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let tp = confusion[[c, c]] as f64;
            let fp = confusion.column(c).sum() as f64 - tp;
            let fn_ = confusion.row(c).sum() as f64 - tp;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .collect();
    let macro_f1 = if n_classes == 0 {
        0.0
    } else {
        per_class_f1.iter().sum::<f64>() / n_classes as f64
    };
    Ok(MetricReport {
        macro_f1,
        per_class_f1,
        confusion,
    })
}

/// `(f1_nl_st - f1_st) / f1_st * 100`.
pub fn gain_percent(f1_nl_st: f64, f1_st: f64) -> Result<f64, EvalError> {
    if f1_st == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok((f1_nl_st - f1_st) / f1_st * 100.0)
}

/// Test-index sets of `k` stratified folds. Each class is shuffled, the
/// classes are laid end to end and positions are dealt to folds round-robin,
/// so fold sizes and per-class fold counts each differ by at most one.
pub fn stratified_folds(
    y: &[usize],
    n_classes: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::InfeasibleFolds(format!(
            "k must be >= 2, got {k}"
        )));
    }
    if k > y.len() {
        return Err(EvalError::InfeasibleFolds(format!(
            "{k} folds but only {} samples",
            y.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        if c >= n_classes {
            return Err(EvalError::LabelOutOfRange {
                label: c,
                n_classes,
            });
        }
        by_class[c].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.len() == 1) {
        return Err(EvalError::InfeasibleFolds(format!(
            "class {c} has a single sample"
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for (c, members) in by_class.iter_mut().enumerate() {
        let mut rng = rng::stream(seed, "fold-class", c as u64);
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Mean per-fold macro F1 of a stratified k-fold run.
pub fn kfold_cv(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    k: usize,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<f64, EvalError> {
    let folds = stratified_folds(y, n_classes, k, seed)?;
    let mut in_test = vec![usize::MAX; y.len()];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            in_test[i] = f;
        }
    }
    let mut total = 0.0;
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..y.len()).filter(|&i| in_test[i] != f).collect();
        let xtr = x.select(Axis(0), &train);
        let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let mut model = spec.build()?;
        model.fit(xtr.view(), &ytr, n_classes)?;
        let pred = model.predict(x.select(Axis(0), test).view())?;
        let truth: Vec<usize> = test.iter().map(|&i| y[i]).collect();
        total += macro_f1(&truth, &pred, n_classes)?.macro_f1;
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFailure {
    pub q: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTuneResult {
    pub best_q: f64,
    pub best_score: f64,
    pub grid: Vec<f64>,
    /// Aligned with `grid`; a failed q scores -1.
    pub mean_cv_scores: Vec<f64>,
    pub folds: usize,
    pub failures: Vec<QFailure>,
}

/// `{0.001, 0.002, ..., 0.999}`.
pub fn default_q_grid() -> Vec<f64> {
    (1..=999).map(|i| i as f64 / 1000.0).collect()
}

/// Score every q by k-fold CV on firing-rate features of `x_norm` and keep the
/// best, ties to the smaller q. Fold assignment for grid point `i` is seeded
/// from `(seed, i)`.
pub fn tune_q(
    x_norm: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    grid: &[f64],
    template: &NeuronConfig,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<QTuneResult, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if let Some(&q) = grid.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
        return Err(EvalError::InvalidQ(q));
    }
    spec.validate()?;
    let outcomes: Vec<Result<f64, String>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &q)| {
            let score = || -> Result<f64, EvalError> {
                let cfg = NeuronConfig { q, ..*template };
                cfg.validate()?;
                let fr = features::transform_dataset(x_norm, &cfg)?;
                let fold_seed = rng::derive_seed(seed, "cv-fold", i as u64);
                kfold_cv(fr.view(), y, n_classes, DEFAULT_FOLDS, spec, fold_seed)
            };
            score().map_err(|e| format!("q = {q}: {e}"))
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (&q, outcome) in grid.iter().zip(outcomes) {
        match outcome {
            Ok(s) => scores.push(s),
            Err(error) => {
                scores.push(-1.0);
                failures.push(QFailure { q, error });
            }
        }
    }
    if failures.len() == grid.len() {
        return Err(EvalError::AllFailed(failures[0].error.clone()));
    }
    // Smallest q among the maxima, independent of grid order.
    let mut best = usize::MAX;
    for i in 0..grid.len() {
        if best == usize::MAX
            || scores[i] > scores[best]
            || (scores[i] == scores[best] && grid[i] < grid[best])
        {
            best = i;
        }
    }
    Ok(QTuneResult {
        best_q: grid[best],
        best_score: scores[best],
        grid: grid.to_vec(),
        mean_cv_scores: scores,
        folds: DEFAULT_FOLDS,
        failures,
    })
}
