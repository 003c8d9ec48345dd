use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernel_matrix::KernelMatrix;

/// Matrices whose smallest eigenvalue is at least `-PSD_TOLERANCE` times the
/// largest are treated as positive semidefinite and left untouched.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub clipped: bool,
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn eigenvalue_range(k: &Array2<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(to_dmatrix(k));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn is_psd(k: &Array2<f64>) -> bool {
    let (min, max) = eigenvalue_range(k);
    min >= -PSD_TOLERANCE * max.abs()
}

/// Clips the negative spectrum of `k_tr` to zero and projects `k_te` rows
/// onto the retained eigenspace. Positive semidefinite inputs pass through.
pub fn repair_indefinite_kernel(
    k_tr: &KernelMatrix,
    k_te: Option<&KernelMatrix>,
) -> Result<(KernelMatrix, Option<KernelMatrix>, RepairReport)> {
    if !k_tr.is_symmetric() {
        return Err(invalid("training kernel is not symmetric"));
    }
    if let Some(te) = k_te {
        if te.ncols() != k_tr.ncols() {
            return Err(invalid(format!(
                "test kernel has {} columns, training kernel {}",
                te.ncols(),
                k_tr.ncols()
            )));
        }
    }
    let eig = SymmetricEigen::new(to_dmatrix(k_tr.values()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min >= -PSD_TOLERANCE * max.abs() {
        return Ok((
            k_tr.clone(),
            k_te.cloned(),
            RepairReport {
                min_eigenvalue: min,
                max_eigenvalue: max,
                clipped: false,
            },
        ));
    }

    let u = &eig.eigenvectors;
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let keep = eig.eigenvalues.map(|l| if l > 0.0 { 1.0 } else { 0.0 });
    let rebuilt = u * DMatrix::from_diagonal(&clipped) * u.transpose();
    let mut tr = to_array(&rebuilt);
    for i in 0..tr.nrows() {
        for j in 0..i {
            let avg = 0.5 * (tr[[i, j]] + tr[[j, i]]);
            tr[[i, j]] = avg;
            tr[[j, i]] = avg;
        }
    }
    let projector = u * DMatrix::from_diagonal(&keep) * u.transpose();
    let te = match k_te {
        Some(te) => Some(te.with_values(to_array(&(to_dmatrix(te.values()) * &projector)))?),
        None => None,
    };
    Ok((
        k_tr.with_values(tr)?,
        te,
        RepairReport {
            min_eigenvalue: min,
            max_eigenvalue: max,
            clipped: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_matrix::KernelMethod;
    use ndarray::array;

    fn km(values: Array2<f64>) -> KernelMatrix {
        let ids: Vec<String> = (0..values.nrows()).map(|i| format!("s{i}")).collect();
        KernelMatrix::new(values, ids.clone(), ids, KernelMethod::Lps).unwrap()
    }

    #[test]
    fn two_by_two_example() {
        let (tr, _, report) = repair_indefinite_kernel(&km(array![[1.0, 2.0], [2.0, 1.0]]), None).unwrap();
        assert!(report.clipped);
        assert!((report.min_eigenvalue + 1.0).abs() < 1e-12);
        assert!((report.max_eigenvalue - 3.0).abs() < 1e-12);
        for x in tr.values() {
            assert!((x - 1.5).abs() < 1e-12);
        }
        assert!(tr.is_symmetric());
    }

    #[test]
    fn psd_input_passes_through() {
        let k = km(array![[2.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 1.5]]);
        let (tr, _, report) = repair_indefinite_kernel(&k, None).unwrap();
        assert!(!report.clipped);
        for (a, b) in tr.values().iter().zip(k.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn repaired_matrix_is_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.gen_range(2..15);
            let mut a = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..1.0));
            for i in 0..n {
                a[[i, i]] = 1.0;
                for j in 0..i {
                    a[[i, j]] = a[[j, i]];
                }
            }
            let te = KernelMatrix::new(
                Array2::from_shape_fn((3, n), |_| rng.gen_range(0.0..1.0)),
                vec!["a".into(), "b".into(), "c".into()],
                (0..n).map(|i| format!("s{i}")).collect(),
                KernelMethod::Lps,
            )
            .unwrap();
            let (tr, te2, _) = repair_indefinite_kernel(&km(a), Some(&te)).unwrap();
            let (min, _) = eigenvalue_range(tr.values());
            assert!(min >= -1e-10, "{min}");
            assert_eq!(te2.unwrap().values().dim(), (3, n));
        }
    }

    #[test]
    fn projection_is_consistent_for_training_rows() {
        // A training row, treated as a test row, maps to its repaired row.
        let k = km(array![[1.0, 0.9, 0.1], [0.9, 1.0, 0.95], [0.1, 0.95, 1.0]]);
        let (tr, te, report) = repair_indefinite_kernel(&k, Some(&k)).unwrap();
        assert!(report.clipped);
        let te = te.unwrap();
        // K P keeps only the positive part of the spectrum.
        for (a, b) in te.values().iter().zip(tr.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let k = KernelMatrix::new(
            array![[1.0, 0.2], [0.3, 1.0]],
            vec!["a".into(), "b".into()],
            vec!["a".into(), "b".into()],
            KernelMethod::Lps,
        )
        .unwrap();
        assert!(repair_indefinite_kernel(&k, None).is_err());
    }
}
