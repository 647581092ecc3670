//! RBF soft-margin SVM solved by SMO with second-order working-set
//! selection, one-vs-rest for more than two classes, and Platt-scaled
//! probabilities.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{
    canonical, check_fit_input, check_predict_input, ClassifierError, ClassifierKind,
    ModelSnapshot, ProbClassifier,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gamma {
    /// `1 / (d * var(X))`, falling back to 1 when the data has no variance.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: Gamma,
    pub tol: f64,
    /// SMO iteration budget per machine; `None` means `max(100_000, 100 n)`.
    pub max_iter: Option<usize>,
    /// Platt probabilities are clipped to `[clip, 1 - clip]`.
    pub probability_clip: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: Gamma::Scale,
            tol: 1e-3,
            max_iter: None,
            probability_clip: 1e-8,
        }
    }
}

const TAU: f64 = 1e-12;

/// One binary machine: `f(x) = sum_i coef_i K(sv_i, x) - rho`, positive side
/// is the machine's class.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Machine {
    /// Dense over the stored support rows; zero for rows unused by this machine.
    coef: Vec<f64>,
    rho: f64,
    platt_a: f64,
    platt_b: f64,
    converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportVectorMachine {
    params: SvmParams,
    n_classes: usize,
    n_features: usize,
    gamma: f64,
    support: Array2<f64>,
    machines: Vec<Machine>,
    fitted: bool,
}

struct SmoOutcome {
    alpha: Vec<f64>,
    rho: f64,
    converged: bool,
}

/// Dual problem `min 0.5 a'Qa - e'a`, `0 <= a <= c`, `y'a = 0` with
/// `Q_ij = y_i y_j K_ij`.
fn smo(k: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> SmoOutcome {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut converged = false;
    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * g[t] > gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            gmax2 = gmax2.max(y[t] * g[t]);
            if i == usize::MAX {
                continue;
            }
            let b = gmax + y[t] * g[t];
            if b > 0.0 {
                let mut a = k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best_obj {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || i == usize::MAX || j == usize::MAX {
            converged = true;
            break;
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Offset from free variables, else the midpoint of the feasible interval.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..n {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    SmoOutcome {
        alpha,
        rho,
        converged,
    }
}

/// Platt sigmoid `P(positive | f) = 1 / (1 + exp(a f + b))` fitted by
/// Newton's method with backtracking on smoothed targets.
fn platt(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = dec.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

fn sigmoid_positive(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
    (-gamma * d2).exp()
}

impl SupportVectorMachine {
    pub fn new(params: SvmParams) -> Self {
        Self {
            params,
            n_classes: 0,
            n_features: 0,
            gamma: 0.0,
            support: Array2::zeros((0, 0)),
            machines: Vec::new(),
            fitted: false,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Raw decision values, one column per machine. A binary problem has a
    /// single machine whose positive side is class 1.
    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        if !self.fitted {
            return Err(ClassifierError::NotFitted);
        }
        check_predict_input(x, self.n_features)?;
        let mut out = Array2::zeros((x.nrows(), self.machines.len()));
        let mut kv = vec![0.0; self.support.nrows()];
        for (i, row) in x.rows().into_iter().enumerate() {
            for (s, kvs) in self.support.rows().into_iter().zip(kv.iter_mut()) {
                *kvs = rbf(s, row, self.gamma);
            }
            for (m, machine) in self.machines.iter().enumerate() {
                let f: f64 = machine.coef.iter().zip(&kv).map(|(c, k)| c * k).sum();
                out[[i, m]] = f - machine.rho;
            }
        }
        Ok(out)
    }
}

impl ProbClassifier for SupportVectorMachine {
    fn kind(&self) -> ClassifierKind {
        ClassifierKind::Svm
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
        let gamma = match self.params.gamma {
            Gamma::Value(g) => g,
            Gamma::Scale => {
                let count = (n * d) as f64;
                let mean = x.sum() / count;
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
                if var > 0.0 {
                    1.0 / (d as f64 * var)
                } else {
                    1.0
                }
            }
        };
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf(x.row(i), x.row(j), gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let max_iter = self.params.max_iter.unwrap_or((100 * n).max(100_000));
        let positives: Vec<usize> = if n_classes == 2 {
            vec![1]
        } else {
            (0..n_classes).collect()
        };

        let mut machines = Vec::with_capacity(positives.len());
        let mut used = vec![false; n];
        for &pos in &positives {
            let is_pos: Vec<bool> = y.iter().map(|&c| c == pos).collect();
            let ys: Vec<f64> = is_pos.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
            let out = smo(&k, &ys, self.params.c, self.params.tol, max_iter);
            let coef: Vec<f64> = out.alpha.iter().zip(&ys).map(|(a, y)| a * y).collect();
            let dec: Vec<f64> = (0..n)
                .map(|i| {
                    let row = &k[i * n..(i + 1) * n];
                    row.iter().zip(&coef).map(|(k, c)| k * c).sum::<f64>() - out.rho
                })
                .collect();
            let (platt_a, platt_b) = platt(&dec, &is_pos);
            for (u, &a) in used.iter_mut().zip(&out.alpha) {
                *u |= a > 0.0;
            }
            machines.push(Machine {
                coef,
                rho: out.rho,
                platt_a,
                platt_b,
                converged: out.converged,
            });
        }

        // Keep only rows that are a support vector of some machine.
        let keep: Vec<usize> = (0..n).filter(|&i| used[i]).collect();
        for m in &mut machines {
            m.coef = keep.iter().map(|&i| m.coef[i]).collect();
        }
        self.support = x.select(ndarray::Axis(0), &keep);
        self.gamma = gamma;
        self.machines = machines;
        self.n_classes = n_classes;
        self.n_features = d;
        self.fitted = true;
        Ok(())
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        let dec = self.decision_function(x)?;
        let clip = self.params.probability_clip;
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        for (i, row) in dec.rows().into_iter().enumerate() {
            let mut p = out.row_mut(i);
            if self.n_classes == 2 {
                let m = &self.machines[0];
                let p1 = sigmoid_positive(row[0], m.platt_a, m.platt_b).clamp(clip, 1.0 - clip);
                p[0] = 1.0 - p1;
                p[1] = p1;
            } else {
                for (c, m) in self.machines.iter().enumerate() {
                    p[c] = sigmoid_positive(row[c], m.platt_a, m.platt_b).clamp(clip, 1.0 - clip);
                }
                let s = p.sum();
                p.mapv_inplace(|v| v / s);
            }
        }
        Ok(out)
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::Svm(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_points_get_opposite_signs() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let mut m = SupportVectorMachine::new(SvmParams::default());
        m.fit(x.view(), &[0, 1], 2).unwrap();
        let f = m.decision_function(x.view()).unwrap();
        assert!(f[[0, 0]] < 0.0 && f[[1, 0]] > 0.0);
        assert!(m.converged());
    }

    #[test]
    fn hard_margin_pair_matches_closed_form() {
        let params = SvmParams {
            c: 10.0,
            gamma: Gamma::Value(1.0),
            tol: 1e-10,
            ..SvmParams::default()
        };
        let mut m = SupportVectorMachine::new(params);
        m.fit(array![[0.0], [1.0]].view(), &[0, 1], 2).unwrap();
        let scale = 1.0 - (-1.0f64).exp();
        for q in [-0.5, 0.0, 0.3, 1.0, 2.0] {
            let f = m.decision_function(array![[q]].view()).unwrap()[[0, 0]];
            let expect = ((-(q - 1.0) * (q - 1.0)).exp() - (-q * q).exp()) / scale;
            assert!((f - expect).abs() < 1e-9, "{q}: {f} vs {expect}");
        }
    }

    #[test]
    fn multiclass_rows_are_stochastic() {
        let x = array![
            [0.0, 0.0],
            [0.1, 0.0],
            [1.0, 0.0],
            [0.9, 0.1],
            [0.0, 1.0],
            [0.1, 0.9]
        ];
        let mut m = SupportVectorMachine::new(SvmParams::default());
        m.fit(x.view(), &[0, 0, 1, 1, 2, 2], 3).unwrap();
        let p = m.predict_proba(x.view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}
