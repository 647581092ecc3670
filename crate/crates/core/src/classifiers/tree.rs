//! CART trees on Gini impurity and the bagged random forest built from them.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmax, canonical, check_fit_input, check_predict_input, ClassifierError, ClassifierKind,
    ModelSnapshot, ProbClassifier,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((d as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => d,
            MaxFeatures::Count(k) => k.clamp(1, d.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            max_depth: None,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        proba: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Best threshold found for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// `sum_c l_c^2 / W_l + sum_c r_c^2 / W_r`; larger means lower weighted Gini.
    pub score: f64,
}

/// Scan one feature for the best Gini threshold over the weighted `rows`.
/// Returns `None` when the feature is constant on `rows`.
pub(crate) fn best_threshold(
    x: &Array2<f64>,
    y: &[usize],
    weights: &[f64],
    rows: &[usize],
    n_classes: usize,
    feature: usize,
    scratch: &mut Vec<(f64, usize)>,
) -> Option<SplitChoice> {
    scratch.clear();
    scratch.extend(rows.iter().map(|&r| (x[[r, feature]], r)));
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if scratch.first()?.0 == scratch.last()?.0 {
        return None;
    }
    let mut total = vec![0.0; n_classes];
    for &(_, r) in scratch.iter() {
        total[y[r]] += weights[r];
    }
    let w_total: f64 = total.iter().sum();
    let mut left = vec![0.0; n_classes];
    let mut w_left = 0.0;
    let mut best: Option<SplitChoice> = None;
    for k in 0..scratch.len() - 1 {
        let (v, r) = scratch[k];
        left[y[r]] += weights[r];
        w_left += weights[r];
        let next = scratch[k + 1].0;
        if next <= v {
            continue;
        }
        let w_right = w_total - w_left;
        if w_left <= 0.0 || w_right <= 0.0 {
            continue;
        }
        let mut sl = 0.0;
        let mut sr = 0.0;
        for c in 0..n_classes {
            let l = left[c];
            let rr = total[c] - l;
            sl += l * l;
            sr += rr * rr;
        }
        let score = sl / w_left + sr / w_right;
        if best.is_none_or(|b| score > b.score) {
            let mut threshold = 0.5 * (v + next);
            if threshold >= next {
                threshold = v;
            }
            best = Some(SplitChoice {
                feature,
                threshold,
                score,
            });
        }
    }
    best
}

/// Weighted class distribution of `rows`, normalized.
pub(crate) fn class_distribution(
    y: &[usize],
    weights: &[f64],
    rows: &[usize],
    n_classes: usize,
) -> Vec<f64> {
    let mut dist = vec![0.0; n_classes];
    for &r in rows {
        dist[y[r]] += weights[r];
    }
    let total: f64 = dist.iter().sum();
    if total > 0.0 {
        dist.iter_mut().for_each(|v| *v /= total);
    } else {
        dist.iter_mut().for_each(|v| *v = 1.0 / n_classes as f64);
    }
    dist
}

/// A single CART classification tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_classes: usize,
}

struct GrowSettings {
    max_features: usize,
    max_depth: Option<usize>,
    min_samples_split: usize,
}

impl DecisionTree {
    /// Grow on the rows with positive weight.
    fn grow(
        x: &Array2<f64>,
        y: &[usize],
        weights: &[f64],
        n_classes: usize,
        settings: &GrowSettings,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = x.ncols();
        let root: Vec<usize> = (0..y.len()).filter(|&r| weights[r] > 0.0).collect();
        let mut nodes = vec![Node::Leaf { proba: Vec::new() }];
        let mut stack = vec![(0usize, root, 0usize)];
        let mut features: Vec<usize> = (0..d).collect();
        let mut scratch = Vec::new();

        while let Some((id, rows, depth)) = stack.pop() {
            let proba = class_distribution(y, weights, &rows, n_classes);
            let pure = proba.iter().filter(|&&p| p > 0.0).count() <= 1;
            let depth_ok = settings.max_depth.is_none_or(|m| depth < m);
            let mut choice: Option<SplitChoice> = None;
            if !pure && depth_ok && rows.len() >= settings.min_samples_split {
                features.shuffle(rng);
                let mut visited = 0;
                for &f in &features {
                    if visited >= settings.max_features {
                        break;
                    }
                    // Constant features do not count against the budget.
                    let Some(c) = best_threshold(x, y, weights, &rows, n_classes, f, &mut scratch)
                    else {
                        continue;
                    };
                    visited += 1;
                    if choice.is_none_or(|b| c.score > b.score) {
                        choice = Some(c);
                    }
                }
            }
            match choice {
                Some(c) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&row| x[[row, c.feature]] <= c.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { proba: Vec::new() });
                    nodes.push(Node::Leaf { proba: Vec::new() });
                    nodes[id] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    stack.push((left + 1, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
                None => nodes[id] = Node::Leaf { proba },
            }
        }
        Self { nodes, n_classes }
    }

    fn leaf_proba(&self, row: ndarray::ArrayView1<f64>) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { proba } => return proba,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    params: RfParams,
    seed: u64,
    n_classes: usize,
    n_features: usize,
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn new(params: RfParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            n_classes: 0,
            n_features: 0,
            trees: Vec::new(),
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

impl ProbClassifier for RandomForest {
    fn kind(&self) -> ClassifierKind {
        ClassifierKind::RandomForest
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<(), ClassifierError> {
        check_fit_input(x, y, n_classes)?;
        if self.params.n_trees == 0 {
            return Err(ClassifierError::InvalidHyperparameter(
                "n_trees must be >= 1".into(),
            ));
        }
        let (x, y) = canonical(x, y);
        let n = y.len();
        let settings = GrowSettings {
            max_features: self.params.max_features.resolve(x.ncols()),
            max_depth: self.params.max_depth,
            min_samples_split: self.params.min_samples_split.max(2),
        };
        self.trees = (0..self.params.n_trees)
            .map(|t| {
                let mut rng = rng::stream(self.seed, "rf-tree", t as u64);
                let weights = if self.params.bootstrap {
                    let mut w = vec![0.0; n];
                    for _ in 0..n {
                        w[rng.random_range(0..n)] += 1.0;
                    }
                    w
                } else {
                    vec![1.0; n]
                };
                DecisionTree::grow(&x, &y, &weights, n_classes, &settings, &mut rng)
            })
            .collect();
        self.n_classes = n_classes;
        self.n_features = x.ncols();
        Ok(())
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        if self.trees.is_empty() {
            return Err(ClassifierError::NotFitted);
        }
        check_predict_input(x, self.n_features)?;
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        let scale = 1.0 / self.trees.len() as f64;
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut acc = out.row_mut(i);
            for tree in &self.trees {
                for (a, p) in acc.iter_mut().zip(tree.leaf_proba(row)) {
                    *a += p;
                }
            }
            acc.mapv_inplace(|v| v * scale);
            // Renormalize against rounding in the running sum.
            let s = acc.sum();
            acc.mapv_inplace(|v| v / s);
        }
        Ok(out)
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::Rf(self.clone())
    }
}

/// Majority class of a weighted row set, ties to the lowest index.
pub(crate) fn weighted_majority(
    y: &[usize],
    weights: &[f64],
    rows: &[usize],
    n_classes: usize,
) -> usize {
    argmax(class_distribution(y, weights, rows, n_classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_tree() -> RfParams {
        RfParams {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..RfParams::default()
        }
    }

    #[test]
    fn fully_grown_tree_memorizes() {
        let x = array![
            [0.1, 0.5],
            [0.2, 0.1],
            [0.3, 0.9],
            [0.4, 0.2],
            [0.5, 0.4],
            [0.6, 0.8]
        ];
        let y = [0, 1, 0, 2, 1, 2];
        let mut m = RandomForest::new(single_tree(), 3);
        m.fit(x.view(), &y, 3).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), y.to_vec());
    }

    #[test]
    fn identical_trees_average_to_one_tree() {
        let x = array![[0.1], [0.35], [0.4], [0.8], [0.9]];
        let y = [0, 1, 0, 1, 1];
        let mut one = RandomForest::new(single_tree(), 1);
        one.fit(x.view(), &y, 2).unwrap();
        let mut many = RandomForest::new(
            RfParams {
                n_trees: 7,
                ..single_tree()
            },
            1,
        );
        many.fit(x.view(), &y, 2).unwrap();
        let q = array![[0.0], [0.37], [0.5], [1.0]];
        assert_eq!(
            one.predict_proba(q.view()).unwrap(),
            many.predict_proba(q.view()).unwrap()
        );
    }

    #[test]
    fn threshold_sits_between_values() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0, 0, 1, 1];
        let w = [1.0; 4];
        let mut s = Vec::new();
        let c = best_threshold(&x, &y, &w, &[0, 1, 2, 3], 2, 0, &mut s).unwrap();
        assert_eq!(c.threshold, 1.5);
        assert!(best_threshold(
            &array![[1.0], [1.0]],
            &[0, 1],
            &[1.0, 1.0],
            &[0, 1],
            2,
            0,
            &mut s
        )
        .is_none());
    }

    #[test]
    fn max_depth_limits_growth() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]];
        let y = [0, 1, 0, 1, 0, 1];
        let mut m = RandomForest::new(
            RfParams {
                max_depth: Some(1),
                ..single_tree()
            },
            0,
        );
        m.fit(x.view(), &y, 2).unwrap();
        assert_eq!(m.trees()[0].depth(), 1);
    }
}
