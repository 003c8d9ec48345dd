//! Soft-margin SVM on a precomputed kernel, solved in the dual by
//! two-variable coordinate ascent on the maximal violating pair.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Prediction, Space};
use crate::error::{invalid, Error, Result};
use crate::kernel_matrix::KernelMatrix;
use crate::mts::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    pub c_margin: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl SmoParams {
    pub fn new(c_margin: f64) -> Self {
        SmoParams {
            c_margin,
            tol: 1e-4,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub labels_pm: Vec<f64>,
    pub c_margin: f64,
    pub gamma: Option<f64>,
    pub space: Space,
    pub train_ids: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    pub fn dual_objective(&self, k: ArrayView2<'_, f64>) -> f64 {
        dual_objective(k, &self.labels_pm, &self.alphas)
    }
}

/// `sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij`
pub fn dual_objective(k: ArrayView2<'_, f64>, y: &[f64], alphas: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alphas[i] * alphas[j] * y[i] * y[j] * k[[i, j]];
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

pub struct SmoSolution {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the dual for a square kernel `k` and `+/-1` targets `y`.
pub fn smo_solve(k: ArrayView2<'_, f64>, y: &[f64], params: &SmoParams) -> Result<SmoSolution> {
    let n = y.len();
    if k.nrows() != k.ncols() {
        return Err(invalid(format!("kernel {:?} is not square", k.dim())));
    }
    if k.nrows() != n {
        return Err(invalid(format!("kernel of size {} for {n} labels", k.nrows())));
    }
    if !(params.c_margin > 0.0) {
        return Err(invalid(format!("C = {} must be positive", params.c_margin)));
    }
    if !(y.iter().any(|&t| t > 0.0) && y.iter().any(|&t| t < 0.0)) {
        return Err(Error::SingleClass);
    }
    let c = params.c_margin;
    let mut alpha = vec![0.0; n];
    // Gradient of 1/2 a'Qa - e'a.
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, t: f64| (t > 0.0 && a < c) || (t < 0.0 && a > 0.0);
    let in_low = |a: f64, t: f64| (t < 0.0 && a < c) || (t > 0.0 && a > 0.0);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let mut i = usize::MAX;
        let mut m_up = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m_up {
                m_up = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < m_low {
                m_low = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || m_up - m_low < params.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut curvature = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
        if curvature <= 0.0 {
            curvature = 1e-12;
        }
        // Step along a_i += y_i t, a_j -= y_j t.
        let bound_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let bound_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = ((m_up - m_low) / curvature).min(bound_i).min(bound_j);

        alpha[i] += y[i] * step;
        alpha[j] -= y[j] * step;
        if step == bound_i {
            alpha[i] = if y[i] > 0.0 { c } else { 0.0 };
        }
        if step == bound_j {
            alpha[j] = if y[j] > 0.0 { 0.0 } else { c };
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += y[t] * step * (k[[t, i]] - k[[t, j]]);
        }
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let mut sum = 0.0;
    let mut n_free = 0usize;
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            sum += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 {
        sum / n_free as f64
    } else {
        (upper + lower) / 2.0
    };
    Ok(SmoSolution {
        alphas: alpha,
        bias: -rho,
        iterations,
        converged,
    })
}

pub fn labels_pm(labels: &[Label]) -> Vec<f64> {
    labels.iter().map(|l| l.sign()).collect()
}

pub fn svm_fit_precomputed(k_tr: &KernelMatrix, labels: &[Label], c_margin: f64) -> Result<SvmModel> {
    svm_fit_with(k_tr, labels, &SmoParams::new(c_margin))
}

pub fn svm_fit_with(k_tr: &KernelMatrix, labels: &[Label], params: &SmoParams) -> Result<SvmModel> {
    if k_tr.nrows() != k_tr.ncols() {
        return Err(invalid(format!(
            "training kernel {:?} is not square",
            k_tr.values().dim()
        )));
    }
    let y = labels_pm(labels);
    let sol = smo_solve(k_tr.values().view(), &y, params)?;
    if !sol.converged {
        log::warn!(
            "SMO stopped after {} iterations without reaching tolerance {}",
            sol.iterations,
            params.tol
        );
    }
    Ok(SvmModel {
        alphas: sol.alphas,
        bias: sol.bias,
        labels_pm: y,
        c_margin: params.c_margin,
        gamma: None,
        space: Space::Input,
        train_ids: k_tr.col_ids().to_vec(),
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

pub fn decision_values(alphas: &[f64], y: &[f64], bias: f64, k_te: ArrayView2<'_, f64>) -> Vec<f64> {
    let coef = Array1::from_iter(alphas.iter().zip(y).map(|(a, t)| a * t));
    k_te.rows()
        .into_iter()
        .map(|row: ArrayView1<'_, f64>| row.dot(&coef) + bias)
        .collect()
}

/// Sign of the decision value; zero goes to the negative class.
pub fn label_of(decision: f64) -> Label {
    if decision > 0.0 {
        Label::Positive
    } else {
        Label::Negative
    }
}

pub fn svm_predict(model: &SvmModel, k_te: &KernelMatrix) -> Result<Vec<Prediction>> {
    if k_te.col_ids() != model.train_ids.as_slice() {
        return Err(invalid(
            "test kernel columns are not aligned with the training samples",
        ));
    }
    Ok(decision_values(&model.alphas, &model.labels_pm, model.bias, k_te.values().view())
        .into_iter()
        .map(|d| Prediction {
            label: label_of(d),
            decision_value: Some(d),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_matrix::KernelMethod;
    use ndarray::{array, Array2};

    fn km(values: Array2<f64>) -> KernelMatrix {
        let n = values.nrows();
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        KernelMatrix::new(values, ids.clone(), ids, KernelMethod::Tck).unwrap()
    }

    use Label::{Negative as N, Positive as P};

    #[test]
    fn two_sample_identity_kernel() {
        for c in [0.25, 0.5, 1.0, 3.0, 100.0] {
            let k = km(Array2::eye(2));
            let m = svm_fit_precomputed(&k, &[P, N], c).unwrap();
            let expected = f64::min(1.0, c);
            assert!((m.alphas[0] - expected).abs() < 1e-12, "C={c}");
            assert!((m.alphas[1] - expected).abs() < 1e-12);
            let pred = svm_predict(&m, &k).unwrap();
            assert_eq!(pred[0].label, P);
            assert_eq!(pred[1].label, N);
        }
    }

    #[test]
    fn rescaling_kernel_and_margin_keeps_predictions() {
        let k = km(array![[1.0, 0.2], [0.2, 1.0]]);
        let base = svm_fit_precomputed(&k, &[P, N], 0.7).unwrap();
        let test = KernelMatrix::new(
            array![[0.9, 0.1], [0.3, 0.5], [0.2, 0.2]],
            vec!["a".into(), "b".into(), "c".into()],
            k.col_ids().to_vec(),
            KernelMethod::Tck,
        )
        .unwrap();
        let p0 = svm_predict(&base, &test).unwrap();
        for lambda in [0.01, 0.5, 4.0, 250.0] {
            let ks = k.with_values(k.values() * lambda).unwrap();
            let ts = test.with_values(test.values() * lambda).unwrap();
            let m = svm_fit_precomputed(&ks, &[P, N], 0.7 / lambda).unwrap();
            let p = svm_predict(&m, &ts).unwrap();
            for (a, b) in p0.iter().zip(&p) {
                assert_eq!(a.label, b.label);
                assert!((a.decision_value.unwrap() - b.decision_value.unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_decision_is_negative() {
        assert_eq!(label_of(0.0), N);
        assert_eq!(label_of(-0.0), N);
        assert_eq!(label_of(1e-300), P);
    }

    #[test]
    fn errors() {
        let k = km(Array2::eye(2));
        assert!(matches!(svm_fit_precomputed(&k, &[P, P], 1.0), Err(Error::SingleClass)));
        assert!(svm_fit_precomputed(&k, &[P, N], 0.0).is_err());
        let rect = KernelMatrix::new(
            Array2::zeros((2, 3)),
            vec!["a".into(), "b".into()],
            vec!["a".into(), "b".into(), "c".into()],
            KernelMethod::Tck,
        )
        .unwrap();
        assert!(svm_fit_precomputed(&rect, &[P, N], 1.0).is_err());
        let m = svm_fit_precomputed(&k, &[P, N], 1.0).unwrap();
        let misaligned = KernelMatrix::new(
            Array2::zeros((1, 2)),
            vec!["t".into()],
            vec!["s1".into(), "s0".into()],
            KernelMethod::Tck,
        )
        .unwrap();
        assert!(svm_predict(&m, &misaligned).is_err());
    }

    #[test]
    fn feasibility_on_random_problems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.gen_range(2..20);
            let x: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k = Array2::from_shape_fn((n, n), |(i, j)| {
                (0..3).map(|d| x[i * 3 + d] * x[j * 3 + d]).sum::<f64>()
            });
            let mut labels: Vec<Label> = (0..n).map(|_| if rng.gen() { P } else { N }).collect();
            labels[0] = P;
            labels[1] = N;
            let c = 10f64.powf(rng.gen_range(-2.0..2.0));
            let m = svm_fit_precomputed(&km(k), &labels, c).unwrap();
            assert!(m.converged);
            let eq: f64 = m.alphas.iter().zip(&m.labels_pm).map(|(a, y)| a * y).sum();
            assert!(eq.abs() <= 1e-6 * c);
            assert!(m.alphas.iter().all(|&a| (0.0..=c).contains(&a)));
        }
    }
}
