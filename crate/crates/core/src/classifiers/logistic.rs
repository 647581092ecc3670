//! Multinomial logistic regression.
//!
//! Minimizes the summed cross-entropy plus `0.5 * l2 * ||W||^2` (intercepts
//! unpenalized) with L-BFGS and a backtracking Armijo line search, so the
//! objective never increases between accepted iterates.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{
    canonical, check_fit_input, check_predict_input, softmax_in_place, ClassifierError,
    ClassifierKind, ModelSnapshot, ProbClassifier,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrParams {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the largest absolute gradient component falls below this
    /// or the objective stops decreasing at floating-point resolution.
    pub tol: f64,
}

impl Default for LrParams {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

const HISTORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const STALL_FTOL: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticRegression {
    params: LrParams,
    n_classes: usize,
    n_features: usize,
    /// Row `c` holds the weights of class `c` followed by its intercept.
    coef: Array2<f64>,
    converged: bool,
    iterations: usize,
    loss_history: Vec<f64>,
    fitted: bool,
}

struct Problem<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    n_classes: usize,
    l2: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.n_classes * (self.x.ncols() + 1)
    }

    /// Objective and gradient at flattened parameters `w`.
    fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.x.ncols();
        let stride = d + 1;
        let k = self.n_classes;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut z = vec![0.0; k];
        for (row, &yi) in self.x.rows().into_iter().zip(self.y) {
            let row = row.as_slice().expect("standard layout");
            for c in 0..k {
                let wc = &w[c * stride..c * stride + d];
                z[c] = w[c * stride + d] + dot(wc, row);
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - z[yi];
            for c in 0..k {
                let p = (z[c] - lse).exp();
                let r = p - if c == yi { 1.0 } else { 0.0 };
                let gc = &mut grad[c * stride..(c + 1) * stride];
                for (g, &v) in gc[..d].iter_mut().zip(row) {
                    *g += r * v;
                }
                gc[d] += r;
            }
        }
        for c in 0..k {
            for j in 0..d {
                let v = w[c * stride + j];
                loss += 0.5 * self.l2 * v * v;
                grad[c * stride + j] += self.l2 * v;
            }
        }
        loss
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl LogisticRegression {
    pub fn new(params: LrParams) -> Self {
        Self {
            params,
            n_classes: 0,
            n_features: 0,
            coef: Array2::zeros((0, 0)),
            converged: false,
            iterations: 0,
            loss_history: Vec::new(),
            fitted: false,
        }
    }

    /// Objective value at the start and after every accepted step.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn coefficients(&self) -> &Array2<f64> {
        &self.coef
    }
}

impl ProbClassifier for LogisticRegression {
    fn kind(&self) -> ClassifierKind {
        ClassifierKind::LogisticRegression
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<(), ClassifierError> {
        check_fit_input(x, y, n_classes)?;
        let (x, y) = canonical(x, y);
        let problem = Problem {
            x: &x,
            y: &y,
            n_classes,
            l2: self.params.l2,
        };
        let n = problem.dim();
        let mut w = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut f = problem.eval(&w, &mut g);
        let mut history = vec![f];
        let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
        let mut converged = max_abs(&g) <= self.params.tol;
        let mut iterations = 0;

        let mut w_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        while !converged && iterations < self.params.max_iter {
            // Two-loop recursion for the L-BFGS direction.
            let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut alphas = Vec::with_capacity(memory.len());
            for (s, yv, rho) in memory.iter().rev() {
                let a = rho * dot(s, &dir);
                dir.iter_mut().zip(yv).for_each(|(d, y)| *d -= a * y);
                alphas.push(a);
            }
            if let Some((s, yv, _)) = memory.back() {
                let gamma = dot(s, yv) / dot(yv, yv);
                dir.iter_mut().for_each(|d| *d *= gamma);
            }
            for ((s, yv, rho), a) in memory.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(yv, &dir);
                dir.iter_mut().zip(s).for_each(|(d, s)| *d += (a - b) * s);
            }
            let mut slope = dot(&g, &dir);
            if !(slope < 0.0) {
                memory.clear();
                dir = g.iter().map(|v| -v).collect();
                slope = -dot(&g, &g);
            }
            let mut step = if memory.is_empty() {
                (1.0 / max_abs(&g)).min(1.0)
            } else {
                1.0
            };

            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                w_new
                    .iter_mut()
                    .zip(&w)
                    .zip(&dir)
                    .for_each(|((wn, w), d)| *wn = w + step * d);
                let f_new = problem.eval(&w_new, &mut g_new);
                if f_new.is_finite() && f_new <= f + ARMIJO_C1 * step * slope {
                    accepted = Some(f_new);
                    break;
                }
                step *= 0.5;
            }
            let Some(f_new) = accepted else {
                break;
            };
            iterations += 1;
            let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if sy > 1e-12 {
                if memory.len() == HISTORY {
                    memory.pop_front();
                }
                memory.push_back((s, yv, 1.0 / sy));
            }
            std::mem::swap(&mut w, &mut w_new);
            std::mem::swap(&mut g, &mut g_new);
            // Summed losses over many rows cannot resolve gradients below
            // roughly sqrt(ulp(f)); treat a stalled objective as converged.
            let stalled = f - f_new <= STALL_FTOL * f.abs().max(f_new.abs()).max(1.0);
            f = f_new;
            history.push(f);
            converged = max_abs(&g) <= self.params.tol || stalled;
        }

        let d = x.ncols();
        self.coef = Array2::from_shape_vec((n_classes, d + 1), w).expect("parameter layout");
        self.n_classes = n_classes;
        self.n_features = d;
        self.converged = converged;
        self.iterations = iterations;
        self.loss_history = history;
        self.fitted = true;
        Ok(())
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        if !self.fitted {
            return Err(ClassifierError::NotFitted);
        }
        check_predict_input(x, self.n_features)?;
        let d = self.n_features;
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        let mut z = vec![0.0; self.n_classes];
        for (i, row) in x.rows().into_iter().enumerate() {
            for (c, zc) in z.iter_mut().enumerate() {
                let w = self.coef.row(c);
                *zc = w[d] + row.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax_in_place(&mut z);
            for (c, &p) in z.iter().enumerate() {
                out[[i, c]] = p;
            }
        }
        Ok(out)
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn converged(&self) -> bool {
        self.converged
    }

    fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::Lr(self.clone())
    }
}
