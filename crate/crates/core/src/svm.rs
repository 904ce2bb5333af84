//! Soft-margin SVM with an RBF kernel, trained by sequential minimal
//! optimization on the dual problem (maximal-violating-pair working set
//! selection, LIBSVM-style). Features are z-scored with parameters taken
//! from the training split only.

use serde::Serialize;
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training set has a single class")]
    SingleClass,
    #[error("training set is empty")]
    Empty,
    #[error("rows have inconsistent dimensions")]
    DimensionMismatch,
    #[error("solver did not converge within {iterations} iterations (KKT gap {gap})")]
    NoConvergence { iterations: usize, gap: f64 },
}

/// Solver and kernel parameters.
#[derive(Debug, Clone, Copy)]
pub struct SvmParams<R> {
    /// misclassification cost
    pub c: R,
    /// RBF width: k(x, z) = exp(-gamma * ||x - z||^2)
    pub gamma: R,
    /// KKT violation tolerance at convergence
    pub tol: R,
    pub max_iter: usize,
}

impl<R: Real> Default for SvmParams<R> {
    fn default() -> Self {
        SvmParams {
            c: R::one(),
            gamma: R::one(),
            tol: R::from_f64_lossy(1e-3),
            max_iter: 100_000,
        }
    }
}

/// Per-feature z-scoring fitted on training data. Constant features keep
/// a unit scale so they standardize to zero rather than dividing by zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer<R> {
    pub means: Vec<R>,
    pub stds: Vec<R>,
}

impl<R: Real> Standardizer<R> {
    pub fn fit(x: &[Vec<R>]) -> Result<Self, SvmError> {
        if x.is_empty() {
            return Err(SvmError::Empty);
        }
        let dim = x[0].len();
        if x.iter().any(|row| row.len() != dim) {
            return Err(SvmError::DimensionMismatch);
        }
        let n = R::from_f64_lossy(x.len() as f64);
        let mut means = vec![R::zero(); dim];
        for row in x {
            for (m, v) in means.iter_mut().zip(row) {
                *m += *v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = vec![R::zero(); dim];
        for row in x {
            for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
                let d = *v - *m;
                *s += d * d;
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if *s <= R::from_f64_lossy(1e-12) {
                *s = R::one();
            }
        }
        Ok(Standardizer { means, stds })
    }

    pub fn apply(&self, row: &[R]) -> Vec<R> {
        row.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| (*v - *m) / *s)
            .collect()
    }
}

fn rbf<R: Real>(a: &[R], b: &[R], gamma: R) -> R {
    let mut d2 = R::zero();
    for (x, z) in a.iter().zip(b) {
        let d = *x - *z;
        d2 += d * d;
    }
    (-gamma * d2).exp()
}

/// A trained classifier: support vectors in standardized space, their
/// signed dual coefficients, and the bias.
#[derive(Debug, Clone, Serialize)]
pub struct SvmModel<R> {
    support: Vec<Vec<R>>,
    /// alpha_i * y_i per support vector
    coef: Vec<R>,
    bias: R,
    pub gamma: R,
    pub c: R,
    pub standardizer: Standardizer<R>,
    /// dual objective value at convergence
    pub dual_objective: R,
}

impl<R: Real> SvmModel<R> {
    pub fn num_support_vectors(&self) -> usize {
        self.support.len()
    }

    /// Support vectors, in standardized feature space.
    pub fn support_vectors(&self) -> &[Vec<R>] {
        &self.support
    }

    /// Signed decision value for one unstandardized row.
    pub fn decision(&self, row: &[R]) -> Result<R, SvmError> {
        if row.len() != self.standardizer.means.len() {
            return Err(SvmError::DimensionMismatch);
        }
        let z = self.standardizer.apply(row);
        let mut acc = self.bias;
        for (sv, w) in self.support.iter().zip(self.coef.iter()) {
            acc += *w * rbf(sv, &z, self.gamma);
        }
        Ok(acc)
    }

    /// Predicted labels: sign of the decision function.
    pub fn predict(&self, x: &[Vec<R>]) -> Result<Vec<bool>, SvmError> {
        x.iter()
            .map(|row| self.decision(row).map(|d| d > R::zero()))
            .collect()
    }

    pub fn accuracy(&self, x: &[Vec<R>], y: &[bool]) -> Result<R, SvmError> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
        Ok(R::from_f64_lossy(hits as f64 / y.len() as f64))
    }
}

/// Train on unstandardized rows with boolean labels (`true` is the
/// positive class). Standardization parameters are fitted here, from this
/// data only.
pub fn svm_train<R: Real>(
    x: &[Vec<R>],
    y: &[bool],
    params: SvmParams<R>,
) -> Result<SvmModel<R>, SvmError> {
    if x.is_empty() {
        return Err(SvmError::Empty);
    }
    let standardizer = Standardizer::fit(x)?;
    svm_train_with_standardizer(x, y, params, standardizer)
}

/// Train with a pre-fitted standardizer (used to hold the feature space
/// fixed across training-set perturbations).
pub fn svm_train_with_standardizer<R: Real>(
    x: &[Vec<R>],
    y: &[bool],
    params: SvmParams<R>,
    standardizer: Standardizer<R>,
) -> Result<SvmModel<R>, SvmError> {
    if x.is_empty() || y.is_empty() {
        return Err(SvmError::Empty);
    }
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch);
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(SvmError::SingleClass);
    }
    let xs: Vec<Vec<R>> = x.iter().map(|row| standardizer.apply(row)).collect();
    let ys: Vec<R> = y
        .iter()
        .map(|&l| if l { R::one() } else { -R::one() })
        .collect();
    let n = xs.len();

    // Gram matrix; desk-scale problems keep this small
    let mut kernel = vec![R::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let k = rbf(&xs[i], &xs[j], params.gamma);
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }
    let q = |i: usize, j: usize| ys[i] * ys[j] * kernel[i * n + j];

    let mut alpha = vec![R::zero(); n];
    // gradient of 1/2 a'Qa - e'a
    let mut grad = vec![-R::one(); n];
    let tau = R::from_f64_lossy(1e-12);

    let mut iterations = 0;
    let (m_final, m_low_final) = loop {
        // maximal violating pair
        let mut i_sel = None;
        let mut m_up = R::neg_infinity();
        for t in 0..n {
            let in_up = (ys[t] > R::zero() && alpha[t] < params.c)
                || (ys[t] < R::zero() && alpha[t] > R::zero());
            if in_up {
                let v = -ys[t] * grad[t];
                if v > m_up {
                    m_up = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut j_sel = None;
        let mut m_low = R::infinity();
        for t in 0..n {
            let in_low = (ys[t] < R::zero() && alpha[t] < params.c)
                || (ys[t] > R::zero() && alpha[t] > R::zero());
            if in_low {
                let v = -ys[t] * grad[t];
                if v < m_low {
                    m_low = v;
                    j_sel = Some(t);
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) => (i, j),
            _ => break (m_up, m_low),
        };
        if m_up - m_low <= params.tol {
            break (m_up, m_low);
        }
        if iterations >= params.max_iter {
            return Err(SvmError::NoConvergence {
                iterations,
                gap: (m_up - m_low).to_f64().unwrap_or(f64::NAN),
            });
        }
        iterations += 1;

        let old_i = alpha[i];
        let old_j = alpha[j];
        if ys[i] != ys[j] {
            let mut quad = kernel[i * n + i] + kernel[j * n + j]
                + R::from_f64_lossy(2.0) * kernel[i * n + j];
            if quad <= tau {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > R::zero() {
                if alpha[j] < R::zero() {
                    alpha[j] = R::zero();
                    alpha[i] = diff;
                }
                if alpha[i] > params.c {
                    alpha[i] = params.c;
                    alpha[j] = params.c - diff;
                }
            } else {
                if alpha[i] < R::zero() {
                    alpha[i] = R::zero();
                    alpha[j] = -diff;
                }
                if alpha[j] > params.c {
                    alpha[j] = params.c;
                    alpha[i] = params.c + diff;
                }
            }
        } else {
            let mut quad = kernel[i * n + i] + kernel[j * n + j]
                - R::from_f64_lossy(2.0) * kernel[i * n + j];
            if quad <= tau {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > params.c {
                if alpha[i] > params.c {
                    alpha[i] = params.c;
                    alpha[j] = sum - params.c;
                }
                if alpha[j] > params.c {
                    alpha[j] = params.c;
                    alpha[i] = sum - params.c;
                }
            } else {
                if alpha[j] < R::zero() {
                    alpha[j] = R::zero();
                    alpha[i] = sum;
                }
                if alpha[i] < R::zero() {
                    alpha[i] = R::zero();
                    alpha[j] = sum;
                }
            }
        }

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        if di != R::zero() || dj != R::zero() {
            for t in 0..n {
                grad[t] += q(t, i) * di + q(t, j) * dj;
            }
        }
    };

    // bias: average of y_t - g(x_t) over free support vectors, else the
    // midpoint of the violating-pair bounds
    let mut free_sum = R::zero();
    let mut free_count = 0usize;
    for t in 0..n {
        if alpha[t] > tau && alpha[t] < params.c - tau {
            free_sum += -ys[t] * grad[t];
            free_count += 1;
        }
    }
    let bias = if free_count > 0 {
        free_sum / R::from_f64_lossy(free_count as f64)
    } else {
        (m_final + m_low_final) / R::from_f64_lossy(2.0)
    };

    // dual objective: e'a - 1/2 a'Qa = 1/2 sum a_i (1 - grad_i)
    let mut objective = R::zero();
    for t in 0..n {
        objective += alpha[t] * (R::one() - grad[t]);
    }
    objective = objective / R::from_f64_lossy(2.0);

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > tau {
            support.push(xs[t].clone());
            coef.push(alpha[t] * ys[t]);
        }
    }

    Ok(SvmModel {
        support,
        coef,
        bias,
        gamma: params.gamma,
        c: params.c,
        standardizer,
        dual_objective: objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: f64, gamma: f64) -> SvmParams<f64> {
        SvmParams {
            c,
            gamma,
            tol: 1e-6,
            max_iter: 100_000,
        }
    }

    #[test]
    fn separable_pair_trains_perfectly() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let y = vec![false, true];
        let m = svm_train(&x, &y, params(1.0, 1.0)).unwrap();
        assert_eq!(m.accuracy(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn xor_layout_is_separable_by_rbf() {
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        let y = vec![true, true, false, false];
        let m = svm_train(&x, &y, params(10.0, 1.0)).unwrap();
        assert_eq!(m.accuracy(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn conflicting_duplicates_do_not_crash() {
        let x = vec![
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![3.0, 3.0],
            vec![-3.0, -3.0],
        ];
        let y = vec![true, false, true, false];
        let m = svm_train(&x, &y, params(1.0, 1.0)).unwrap();
        let pred = m.predict(&x[..2].to_vec()).unwrap();
        // the two identical points get the same label, so one is wrong
        let hits = pred
            .iter()
            .zip(&y[..2])
            .filter(|(p, t)| p == t)
            .count();
        assert!(hits <= 1);
    }

    #[test]
    fn single_class_is_an_error() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            svm_train(&x, &[true, true], params(1.0, 1.0)),
            Err(SvmError::SingleClass)
        ));
    }

    #[test]
    fn empty_prediction_is_empty() {
        let x = vec![vec![0.0], vec![1.0]];
        let m = svm_train(&x, &[false, true], params(1.0, 1.0)).unwrap();
        assert!(m.predict(&[]).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        let m = svm_train(&x, &[false, true], params(1.0, 1.0)).unwrap();
        assert!(matches!(
            m.decision(&[0.0, 1.0]),
            Err(SvmError::DimensionMismatch)
        ));
    }

    #[test]
    fn point_on_positive_support_vector_is_positive() {
        let x = vec![
            vec![5.0, 5.0],
            vec![5.2, 4.9],
            vec![-5.0, -5.0],
            vec![-4.8, -5.1],
        ];
        let y = vec![true, true, false, false];
        let m = svm_train(&x, &y, params(10.0, 1.0)).unwrap();
        assert!(m.decision(&[5.0, 5.0]).unwrap() > 0.0);
    }

    #[test]
    fn standardizer_guards_constant_features() {
        let x = vec![vec![2.0, 1.0], vec![2.0, 3.0]];
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.stds[0], 1.0);
        let z = s.apply(&[2.0, 2.0]);
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn duplicating_a_non_support_point_leaves_predictions_unchanged() {
        // two tight clusters: interior points end up with zero dual weight
        let mut x: Vec<Vec<f64>> = Vec::new();
        let mut y = Vec::new();
        for i in 0..6 {
            let t = i as f64 * 0.07;
            x.push(vec![2.0 + t, 2.0 - t]);
            y.push(true);
            x.push(vec![-2.0 - t, -2.0 + t]);
            y.push(false);
        }
        // hold the feature space fixed so the comparison is exact
        let standardizer = Standardizer::fit(&x).unwrap();
        let m1 =
            svm_train_with_standardizer(&x, &y, params(1.0, 0.5), standardizer.clone()).unwrap();

        // locate a training point that is not a support vector
        let not_sv = (0..x.len())
            .find(|&i| {
                let z = m1.standardizer.apply(&x[i]);
                !m1.support_vectors().iter().any(|sv| {
                    sv.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-12)
                })
            })
            .expect("some training point has zero dual weight");

        x.push(x[not_sv].clone());
        y.push(y[not_sv]);
        let m2 = svm_train_with_standardizer(&x, &y, params(1.0, 0.5), standardizer).unwrap();

        let probes: Vec<Vec<f64>> = (-4..=4)
            .flat_map(|a| (-4..=4).map(move |b| vec![a as f64, b as f64]))
            .collect();
        for p in &probes {
            let d1 = m1.decision(p).unwrap();
            let d2 = m2.decision(p).unwrap();
            assert!((d1 - d2).abs() < 1e-6, "decision drifted: {d1} vs {d2}");
        }
    }
}
