//! Probabilistic base learners driven by the self-training loop.
//!
//! Every learner fits on its training rows sorted into a canonical order
//! (lexicographic on features, then label), so row permutations of the
//! training set cannot change the fitted model. Randomized learners draw all
//! randomness from the spec seed via [`crate::rng`].

mod adaboost;
mod gnb;
mod logistic;
mod svm;
mod tree;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adaboost::{AbParams, AdaBoost, EarlyStop, Stump};
pub use gnb::{GaussianNb, GnbParams};
pub use logistic::{LogisticRegression, LrParams};
pub use svm::{Gamma, SupportVectorMachine, SvmParams};
pub use tree::{DecisionTree, MaxFeatures, RandomForest, RfParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("model is not fitted")]
    NotFitted,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {class} has no training sample")]
    MissingClass { class: usize },
    #[error("expected {expected} features, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("non-finite input value")]
    NonFinite,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

/// A classifier emitting a row-stochastic class-probability matrix.
pub trait ProbClassifier: Send + Sync + fmt::Debug {
    fn kind(&self) -> ClassifierKind;

    /// Fit on `x` with labels in `0..n_classes`. Refitting discards the
    /// previous model.
    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<(), ClassifierError>;

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError>;

    /// Row-wise argmax of [`predict_proba`](Self::predict_proba), ties to the
    /// lowest class index.
    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>, ClassifierError> {
        Ok(argmax_rows(self.predict_proba(x)?.view()))
    }

    fn n_classes(&self) -> usize;

    /// False when an iterative solver stopped on its budget or boosting
    /// stopped early on a useless round.
    fn converged(&self) -> bool {
        true
    }

    fn snapshot(&self) -> ModelSnapshot;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "RF")]
    RandomForest,
    #[serde(rename = "AB")]
    AdaBoost,
    #[serde(rename = "SVM")]
    Svm,
    #[serde(rename = "LR")]
    LogisticRegression,
    #[serde(rename = "GNB")]
    GaussianNb,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::RandomForest,
        ClassifierKind::AdaBoost,
        ClassifierKind::Svm,
        ClassifierKind::LogisticRegression,
        ClassifierKind::GaussianNb,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ClassifierKind::RandomForest => "RF",
            ClassifierKind::AdaBoost => "AB",
            ClassifierKind::Svm => "SVM",
            ClassifierKind::LogisticRegression => "LR",
            ClassifierKind::GaussianNb => "GNB",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.short_name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown classifier {s:?} (expected RF, AB, SVM, LR or GNB)"))
    }
}

/// Kind-specific hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Hyperparameters {
    #[serde(rename = "GNB")]
    Gnb(GnbParams),
    #[serde(rename = "LR")]
    Lr(LrParams),
    #[serde(rename = "RF")]
    Rf(RfParams),
    #[serde(rename = "AB")]
    Ab(AbParams),
    #[serde(rename = "SVM")]
    Svm(SvmParams),
}

impl Hyperparameters {
    pub fn default_for(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::GaussianNb => Hyperparameters::Gnb(GnbParams::default()),
            ClassifierKind::LogisticRegression => Hyperparameters::Lr(LrParams::default()),
            ClassifierKind::RandomForest => Hyperparameters::Rf(RfParams::default()),
            ClassifierKind::AdaBoost => Hyperparameters::Ab(AbParams::default()),
            ClassifierKind::Svm => Hyperparameters::Svm(SvmParams::default()),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Hyperparameters::Gnb(_) => ClassifierKind::GaussianNb,
            Hyperparameters::Lr(_) => ClassifierKind::LogisticRegression,
            Hyperparameters::Rf(_) => ClassifierKind::RandomForest,
            Hyperparameters::Ab(_) => ClassifierKind::AdaBoost,
            Hyperparameters::Svm(_) => ClassifierKind::Svm,
        }
    }
}

/// Recipe for building a fresh, unfitted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(hyperparameters: Hyperparameters, seed: u64) -> Self {
        Self {
            hyperparameters,
            seed,
        }
    }

    pub fn default_for(kind: ClassifierKind, seed: u64) -> Self {
        Self::new(Hyperparameters::default_for(kind), seed)
    }

    pub fn kind(&self) -> ClassifierKind {
        self.hyperparameters.kind()
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidHyperparameter(m.to_owned()));
        match &self.hyperparameters {
            Hyperparameters::Gnb(p) if !(p.var_smoothing >= 0.0) => {
                bad("var_smoothing must be >= 0")
            }
            Hyperparameters::Lr(p) if !(p.l2 >= 0.0) => bad("l2 must be >= 0"),
            Hyperparameters::Lr(p) if !(p.tol > 0.0) => bad("tol must be > 0"),
            Hyperparameters::Rf(p) if p.n_trees == 0 => bad("n_trees must be >= 1"),
            Hyperparameters::Rf(p) if p.min_samples_split < 2 => {
                bad("min_samples_split must be >= 2")
            }
            Hyperparameters::Rf(RfParams {
                max_features: MaxFeatures::Count(0),
                ..
            }) => bad("max_features must be >= 1"),
            Hyperparameters::Ab(p) if !(p.learning_rate > 0.0) => bad("learning_rate must be > 0"),
            Hyperparameters::Svm(p) if !(p.c > 0.0) => bad("C must be > 0"),
            Hyperparameters::Svm(p) if !(p.tol > 0.0) => bad("tol must be > 0"),
            Hyperparameters::Svm(SvmParams {
                gamma: Gamma::Value(g),
                ..
            }) if !(*g > 0.0) => bad("gamma must be > 0"),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn ProbClassifier>, ClassifierError> {
        self.validate()?;
        Ok(match &self.hyperparameters {
            Hyperparameters::Gnb(p) => Box::new(GaussianNb::new(p.clone())),
            Hyperparameters::Lr(p) => Box::new(LogisticRegression::new(p.clone())),
            Hyperparameters::Rf(p) => Box::new(RandomForest::new(p.clone(), self.seed)),
            Hyperparameters::Ab(p) => Box::new(AdaBoost::new(p.clone())),
            Hyperparameters::Svm(p) => Box::new(SupportVectorMachine::new(p.clone())),
        })
    }
}

/// Structured text snapshot of a fitted model. Not a stable format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model")]
pub enum ModelSnapshot {
    #[serde(rename = "GNB")]
    Gnb(GaussianNb),
    #[serde(rename = "LR")]
    Lr(LogisticRegression),
    #[serde(rename = "RF")]
    Rf(RandomForest),
    #[serde(rename = "AB")]
    Ab(AdaBoost),
    #[serde(rename = "SVM")]
    Svm(SupportVectorMachine),
}

impl ModelSnapshot {
    pub fn to_json(&self) -> Result<String, ClassifierError> {
        serde_json::to_string_pretty(self).map_err(|e| ClassifierError::Snapshot(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        serde_json::from_str(text).map_err(|e| ClassifierError::Snapshot(e.to_string()))
    }

    pub fn into_classifier(self) -> Box<dyn ProbClassifier> {
        match self {
            ModelSnapshot::Gnb(m) => Box::new(m),
            ModelSnapshot::Lr(m) => Box::new(m),
            ModelSnapshot::Rf(m) => Box::new(m),
            ModelSnapshot::Ab(m) => Box::new(m),
            ModelSnapshot::Svm(m) => Box::new(m),
        }
    }
}

/// Argmax per row; ties resolve to the lowest column.
pub fn argmax_rows(proba: ArrayView2<f64>) -> Vec<usize> {
    proba
        .axis_iter(Axis(0))
        .map(|r| argmax(r.iter().copied()))
        .collect()
}

pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Shared input checks for `fit`.
pub(crate) fn check_fit_input(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<(), ClassifierError> {
    if x.nrows() == 0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if x.nrows() != y.len() {
        return Err(ClassifierError::LengthMismatch {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if n_classes < 2 {
        return Err(ClassifierError::TooFewClasses(n_classes));
    }
    if let Some(&label) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ClassifierError::LabelOutOfRange { label, n_classes });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::NonFinite);
    }
    Ok(())
}

pub(crate) fn check_predict_input(
    x: ArrayView2<f64>,
    n_features: usize,
) -> Result<(), ClassifierError> {
    if x.ncols() != n_features {
        return Err(ClassifierError::FeatureMismatch {
            expected: n_features,
            got: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::NonFinite);
    }
    Ok(())
}

/// Training rows in canonical order, as an owned standard-layout copy.
pub(crate) fn canonical(x: ArrayView2<f64>, y: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let order = canonical_order(x, y);
    let xs = x.select(Axis(0), &order);
    let ys = order.iter().map(|&i| y[i]).collect();
    (xs.as_standard_layout().into_owned(), ys)
}

/// Row permutation that sorts `(x, y)` lexicographically.
pub(crate) fn canonical_order(x: ArrayView2<f64>, y: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(y[a].cmp(&y[b]))
    });
    order
}

/// Numerically stable in-place softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
