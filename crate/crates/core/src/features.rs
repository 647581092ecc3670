//! Min-max scaling and the firing-rate transform.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaos::{fire, ChaosError, NeuronConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("cannot fit normalization on an empty matrix")]
    Empty,
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("matrix has {got} columns but the statistics cover {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("firing failed at row {row}, column {col}: {source}")]
    Firing {
        row: usize,
        col: usize,
        #[source]
        source: ChaosError,
    },
}

/// Column-wise range of a fitted matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormalizationStats {
    pub fn n_features(&self) -> usize {
        self.mins.len()
    }
}

pub fn fit_minmax(x: ArrayView2<f64>) -> Result<NormalizationStats, FeatureError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(FeatureError::Empty);
    }
    if let Some(((row, col), &value)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(FeatureError::NonFinite { row, col, value });
    }
    let mins = x
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let maxs = x
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(NormalizationStats { mins, maxs })
}

/// Rescale each column onto `[0, 1]`. Values outside the fitted range are
/// clamped and constant columns map to zero.
pub fn apply_minmax(
    x: ArrayView2<f64>,
    stats: &NormalizationStats,
) -> Result<Array2<f64>, FeatureError> {
    if x.ncols() != stats.n_features() {
        return Err(FeatureError::ShapeMismatch {
            expected: stats.n_features(),
            got: x.ncols(),
        });
    }
    let mut out = x.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (lo, hi) = (stats.mins[j], stats.maxs[j]);
        let range = hi - lo;
        col.mapv_inplace(|v| {
            if range > 0.0 {
                ((v - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
    }
    Ok(out)
}

/// Firing rates of a normalized matrix, one neuron per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringRateMatrix(Array2<f64>);

impl FiringRateMatrix {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

pub fn transform_dataset(
    x_norm: ArrayView2<f64>,
    config: &NeuronConfig,
) -> Result<FiringRateMatrix, FeatureError> {
    let (rows, cols) = x_norm.dim();
    let per_row: Vec<Result<Vec<f64>, FeatureError>> = (0..rows)
        .into_par_iter()
        .map(|i| {
            (0..cols)
                .map(|j| {
                    fire(config, x_norm[[i, j]], false)
                        .map(|r| r.firing_rate)
                        .map_err(|source| FeatureError::Firing {
                            row: i,
                            col: j,
                            source,
                        })
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(rows * cols);
    for row in per_row {
        values.extend(row?);
    }
    let arr = Array2::from_shape_vec((rows, cols), values).expect("row-major shape");
    Ok(FiringRateMatrix(arr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn fit_examples() {
        let s = fit_minmax(array![[0.0], [1.0]].view()).unwrap();
        assert_eq!((s.mins.clone(), s.maxs.clone()), (vec![0.0], vec![1.0]));
        let s = fit_minmax(array![[2.0, 5.0], [4.0, 5.0]].view()).unwrap();
        assert_eq!(s.mins, vec![2.0, 5.0]);
        assert_eq!(s.maxs, vec![4.0, 5.0]);
        let s = fit_minmax(array![[-1.0], [3.0]].view()).unwrap();
        assert_eq!((s.mins, s.maxs), (vec![-1.0], vec![3.0]));
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert_eq!(
            fit_minmax(Array2::<f64>::zeros((0, 2)).view()),
            Err(FeatureError::Empty)
        );
        assert!(matches!(
            fit_minmax(array![[1.0, f64::NAN]].view()),
            Err(FeatureError::NonFinite { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn apply_examples() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.25]];
        let s = fit_minmax(x.view()).unwrap();
        assert_eq!(apply_minmax(x.view(), &s).unwrap(), x);

        let x = array![[2.0], [4.0]];
        let s = fit_minmax(x.view()).unwrap();
        assert_eq!(apply_minmax(x.view(), &s).unwrap(), array![[0.0], [1.0]]);

        let x = array![[7.0], [7.0]];
        let s = fit_minmax(x.view()).unwrap();
        assert_eq!(apply_minmax(x.view(), &s).unwrap(), array![[0.0], [0.0]]);

        assert!(matches!(
            apply_minmax(array![[1.0, 2.0]].view(), &s),
            Err(FeatureError::ShapeMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn unseen_values_are_clamped() {
        let s = fit_minmax(array![[0.0], [10.0]].view()).unwrap();
        let out = apply_minmax(array![[-5.0], [15.0], [5.0]].view(), &s).unwrap();
        assert_eq!(out, array![[0.0], [1.0], [0.5]]);
    }

    #[test]
    fn transform_empty_and_deterministic() {
        let c = NeuronConfig::with_q(0.34).unwrap();
        let empty = Array2::<f64>::zeros((0, 3));
        assert_eq!(transform_dataset(empty.view(), &c).unwrap().dim(), (0, 3));
        let x = array![[0.9, 0.1], [0.5, 0.3]];
        assert_eq!(
            transform_dataset(x.view(), &c).unwrap(),
            transform_dataset(x.view(), &c).unwrap()
        );
    }

    #[test]
    fn transform_reports_coordinates() {
        let c = NeuronConfig::with_q(0.34).unwrap();
        let x = array![[0.5, 0.2], [0.1, 1.5]];
        match transform_dataset(x.view(), &c) {
            Err(FeatureError::Firing { row, col, .. }) => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn apply_output_in_unit_interval(
            rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 3), 1..12),
            probe in proptest::collection::vec(-500.0f64..500.0, 3),
        ) {
            let n = rows.len();
            let x = Array2::from_shape_vec((n, 3), rows.concat()).unwrap();
            let s = fit_minmax(x.view()).unwrap();
            let out = apply_minmax(x.view(), &s).unwrap();
            prop_assert_eq!(out.dim(), x.dim());
            let p = Array2::from_shape_vec((1, 3), probe).unwrap();
            let out_p = apply_minmax(p.view(), &s).unwrap();
            prop_assert!(out.iter().chain(out_p.iter()).all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn transform_commutes_with_row_permutation(
            vals in proptest::collection::vec(0.0f64..=1.0, 2..24),
            q in 0.01f64..0.99,
        ) {
            let n = vals.len() / 2;
            let x = Array2::from_shape_vec((n, 2), vals[..2 * n].to_vec()).unwrap();
            let c = NeuronConfig::with_q(q).unwrap();
            let fx = transform_dataset(x.view(), &c).unwrap().into_inner();
            prop_assert!(fx.iter().all(|v| (0.0..=1.0).contains(v)));
            let rev: Vec<usize> = (0..n).rev().collect();
            let xr = x.select(Axis(0), &rev);
            let fr = transform_dataset(xr.view(), &c).unwrap().into_inner();
            prop_assert_eq!(fr, fx.select(Axis(0), &rev));
        }
    }
}
