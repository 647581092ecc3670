use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{
    canonical, check_fit_input, check_predict_input, ClassifierError, ClassifierKind,
    ModelSnapshot, ProbClassifier,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnbParams {
    /// Added to every per-class variance, as a fraction of the largest
    /// feature variance in the training set.
    pub var_smoothing: f64,
}

impl Default for GnbParams {
    fn default() -> Self {
        Self {
            var_smoothing: 1e-9,
        }
    }
}

/// Gaussian naive Bayes with class-frequency priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianNb {
    params: GnbParams,
    n_classes: usize,
    log_prior: Vec<f64>,
    /// classes x features
    means: Array2<f64>,
    /// classes x features, smoothing included
    variances: Array2<f64>,
    fitted: bool,
}

impl GaussianNb {
    pub fn new(params: GnbParams) -> Self {
        Self {
            params,
            n_classes: 0,
            log_prior: Vec::new(),
            means: Array2::zeros((0, 0)),
            variances: Array2::zeros((0, 0)),
            fitted: false,
        }
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }

    fn joint_log_likelihood(&self, row: &[f64], out: &mut [f64]) {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        for c in 0..self.n_classes {
            let mut ll = self.log_prior[c];
            for (j, &v) in row.iter().enumerate() {
                let var = self.variances[[c, j]];
                let d = v - self.means[[c, j]];
                ll -= 0.5 * (ln_2pi + var.ln() + d * d / var);
            }
            out[c] = ll;
        }
    }
}

impl ProbClassifier for GaussianNb {
    fn kind(&self) -> ClassifierKind {
        ClassifierKind::GaussianNb
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<(), ClassifierError> {
        check_fit_input(x, y, n_classes)?;
        let (x, y) = canonical(x, y);
        let (n, d) = x.dim();

        let mut counts = vec![0usize; n_classes];
        let mut sums = Array2::<f64>::zeros((n_classes, d));
        for (row, &c) in x.rows().into_iter().zip(&y) {
            counts[c] += 1;
            let mut s = sums.row_mut(c);
            s += &row;
        }
        if let Some(class) = counts.iter().position(|&k| k == 0) {
            return Err(ClassifierError::MissingClass { class });
        }
        let mut means = sums;
        for c in 0..n_classes {
            means.row_mut(c).mapv_inplace(|v| v / counts[c] as f64);
        }
        let mut variances = Array2::<f64>::zeros((n_classes, d));
        for (row, &c) in x.rows().into_iter().zip(&y) {
            for j in 0..d {
                let dv = row[j] - means[[c, j]];
                variances[[c, j]] += dv * dv;
            }
        }
        for c in 0..n_classes {
            variances.row_mut(c).mapv_inplace(|v| v / counts[c] as f64);
        }

        // Largest population variance over all training features.
        let max_var = (0..d)
            .map(|j| {
                let col = x.column(j);
                let mean = col.sum() / n as f64;
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
            })
            .fold(0.0, f64::max);
        let scale = if max_var > 0.0 { max_var } else { 1.0 };
        let epsilon = (self.params.var_smoothing * scale).max(f64::MIN_POSITIVE);
        variances.mapv_inplace(|v| v + epsilon);

        self.log_prior = counts.iter().map(|&k| (k as f64 / n as f64).ln()).collect();
        self.means = means;
        self.variances = variances;
        self.n_classes = n_classes;
        self.fitted = true;
        Ok(())
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        if !self.fitted {
            return Err(ClassifierError::NotFitted);
        }
        check_predict_input(x, self.means.ncols())?;
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        let mut buf = vec![0.0; self.n_classes];
        let mut row_buf = Vec::with_capacity(x.ncols());
        for (i, row) in x.rows().into_iter().enumerate() {
            row_buf.clear();
            row_buf.extend(row.iter().copied());
            self.joint_log_likelihood(&row_buf, &mut buf);
            super::softmax_in_place(&mut buf);
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&buf[..]));
        }
        Ok(out)
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::Gnb(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fit(x: Array2<f64>, y: &[usize]) -> GaussianNb {
        let mut m = GaussianNb::new(GnbParams::default());
        m.fit(x.view(), y, 2).unwrap();
        m
    }

    #[test]
    fn nearer_class_wins() {
        let m = fit(array![[0.0], [1.0]], &[0, 1]);
        let p = m.predict_proba(array![[0.0]].view()).unwrap();
        assert!(p[[0, 0]] > p[[0, 1]]);
    }

    #[test]
    fn mirror_symmetric_classes_split_evenly() {
        let m = fit(array![[0.0], [0.2], [0.8], [1.0]], &[0, 0, 1, 1]);
        let p = m.predict_proba(array![[0.5]].view()).unwrap();
        assert!((p[[0, 0]] - 0.5).abs() < 1e-9);
        assert!((p[[0, 1]] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn missing_class_is_an_error() {
        let mut m = GaussianNb::new(GnbParams::default());
        let err = m.fit(array![[0.0], [1.0]].view(), &[0, 0], 2).unwrap_err();
        assert_eq!(err, ClassifierError::MissingClass { class: 1 });
    }

    #[test]
    fn unfitted_predict_fails() {
        let m = GaussianNb::new(GnbParams::default());
        assert_eq!(
            m.predict_proba(array![[0.0]].view()).unwrap_err(),
            ClassifierError::NotFitted
        );
    }
}
