//! SAMME boosting over depth-1 Gini stumps.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::tree::{best_threshold, weighted_majority, SplitChoice};
use super::{
    canonical_order, check_fit_input, check_predict_input, softmax_in_place, ClassifierError,
    ClassifierKind, ModelSnapshot, ProbClassifier,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
}

impl Default for AbParams {
    fn default() -> Self {
        Self {
            n_estimators: 50,
            learning_rate: 1.0,
        }
    }
}

/// Why boosting ended before `n_estimators` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EarlyStop {
    /// A stump classified every weighted sample correctly.
    Perfect,
    /// A stump was no better than chance and was discarded.
    WorseThanChance,
}

/// `x[feature] <= threshold` votes `left`, otherwise `right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

impl Stump {
    pub fn predict_row(&self, row: ndarray::ArrayView1<f64>) -> usize {
        if row[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }

    fn fit(x: &Array2<f64>, y: &[usize], w: &[f64], n_classes: usize) -> Stump {
        let rows: Vec<usize> = (0..y.len()).collect();
        let mut scratch = Vec::new();
        let mut best: Option<SplitChoice> = None;
        for f in 0..x.ncols() {
            if let Some(c) = best_threshold(x, y, w, &rows, n_classes, f, &mut scratch) {
                if best.is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        match best {
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| x[[i, c.feature]] <= c.threshold);
                Stump {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: weighted_majority(y, w, &l, n_classes),
                    right: weighted_majority(y, w, &r, n_classes),
                }
            }
            None => {
                // Every feature is constant: a single-leaf vote.
                let class = weighted_majority(y, w, &rows, n_classes);
                Stump {
                    feature: 0,
                    threshold: x[[0, 0]],
                    left: class,
                    right: class,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaBoost {
    params: AbParams,
    n_classes: usize,
    n_features: usize,
    /// Stumps with their vote weights.
    estimators: Vec<(Stump, f64)>,
    early_stop: Option<EarlyStop>,
    fitted: bool,
}

impl AdaBoost {
    pub fn new(params: AbParams) -> Self {
        Self {
            params,
            n_classes: 0,
            n_features: 0,
            estimators: Vec::new(),
            early_stop: None,
            fitted: false,
        }
    }

    pub fn estimators(&self) -> &[(Stump, f64)] {
        &self.estimators
    }

    pub fn early_stop(&self) -> Option<EarlyStop> {
        self.early_stop
    }

    /// Fit from explicit initial sample weights (normalized internally).
    pub fn fit_weighted(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        n_classes: usize,
        sample_weight: &[f64],
    ) -> Result<(), ClassifierError> {
        check_fit_input(x, y, n_classes)?;
        if sample_weight.len() != y.len() {
            return Err(ClassifierError::LengthMismatch {
                rows: y.len(),
                labels: sample_weight.len(),
            });
        }
        if sample_weight.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || sample_weight.iter().sum::<f64>() <= 0.0
        {
            return Err(ClassifierError::InvalidHyperparameter(
                "sample weights must be finite, non-negative and not all zero".into(),
            ));
        }
        let order = canonical_order(x, y);
        let xs = x.select(Axis(0), &order).as_standard_layout().into_owned();
        let ys: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let mut w: Vec<f64> = order.iter().map(|&i| sample_weight[i]).collect();
        normalize(&mut w);

        let k = n_classes as f64;
        let lr = self.params.learning_rate;
        let mut estimators = Vec::new();
        let mut early_stop = None;
        for _ in 0..self.params.n_estimators {
            let stump = Stump::fit(&xs, &ys, &w, n_classes);
            let miss: Vec<bool> = xs
                .rows()
                .into_iter()
                .zip(&ys)
                .map(|(row, &c)| stump.predict_row(row) != c)
                .collect();
            let err: f64 = w
                .iter()
                .zip(&miss)
                .filter(|(_, &m)| m)
                .map(|(w, _)| w)
                .sum();
            if err <= 0.0 {
                estimators.push((stump, 1.0));
                early_stop = Some(EarlyStop::Perfect);
                break;
            }
            if err >= 1.0 - 1.0 / k {
                early_stop = Some(EarlyStop::WorseThanChance);
                break;
            }
            let alpha = lr * (((1.0 - err) / err).ln() + (k - 1.0).ln());
            for (wi, &m) in w.iter_mut().zip(&miss) {
                if m {
                    *wi *= alpha.exp();
                }
            }
            normalize(&mut w);
            estimators.push((stump, alpha));
        }

        self.n_classes = n_classes;
        self.n_features = x.ncols();
        self.estimators = estimators;
        self.early_stop = early_stop;
        self.fitted = true;
        Ok(())
    }
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
}

impl ProbClassifier for AdaBoost {
    fn kind(&self) -> ClassifierKind {
        ClassifierKind::AdaBoost
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<(), ClassifierError> {
        let w = vec![1.0; y.len()];
        self.fit_weighted(x, y, n_classes, &w)
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        if !self.fitted {
            return Err(ClassifierError::NotFitted);
        }
        check_predict_input(x, self.n_features)?;
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        let mut scores = vec![0.0; self.n_classes];
        for (i, row) in x.rows().into_iter().enumerate() {
            scores.iter_mut().for_each(|s| *s = 0.0);
            for (stump, alpha) in &self.estimators {
                scores[stump.predict_row(row)] += alpha;
            }
            softmax_in_place(&mut scores);
            for (c, &p) in scores.iter().enumerate() {
                out[[i, c]] = p;
            }
        }
        Ok(out)
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn converged(&self) -> bool {
        self.early_stop != Some(EarlyStop::WorseThanChance)
    }

    fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::Ab(self.clone())
    }
}
