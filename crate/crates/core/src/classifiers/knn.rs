use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::error::{invalid, Error, Result};
use crate::kernel_matrix::KernelMatrix;
use crate::mts::Label;

/// Similarity between embedding vectors. Distances are negated so that a
/// larger value always means more similar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorSimilarity {
    Euclidean,
    Cosine,
    Cityblock,
    Pearson,
}

impl VectorSimilarity {
    /// Declaration order; also the tie-break order in model selection.
    pub const ALL: [VectorSimilarity; 4] = [
        VectorSimilarity::Euclidean,
        VectorSimilarity::Cosine,
        VectorSimilarity::Cityblock,
        VectorSimilarity::Pearson,
    ];
}

impl fmt::Display for VectorSimilarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VectorSimilarity::Euclidean => "euclidean",
            VectorSimilarity::Cosine => "cosine",
            VectorSimilarity::Cityblock => "cityblock",
            VectorSimilarity::Pearson => "pearson",
        })
    }
}

impl FromStr for VectorSimilarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VectorSimilarity::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown vector similarity `{s}`")))
    }
}

pub fn vector_similarity(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    kind: VectorSimilarity,
) -> Result<f64> {
    if u.len() != v.len() {
        return Err(invalid(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    match kind {
        VectorSimilarity::Euclidean => Ok(-u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()),
        VectorSimilarity::Cityblock => Ok(-u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<f64>()),
        VectorSimilarity::Cosine => {
            let nu = u.dot(&u).sqrt();
            let nv = v.dot(&v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::Undefined("cosine of a zero vector".into()));
            }
            Ok(u.dot(&v) / (nu * nv))
        }
        VectorSimilarity::Pearson => {
            let n = u.len() as f64;
            let mu = u.sum() / n;
            let mv = v.sum() / n;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (a, b) in u.iter().zip(v) {
                let (da, db) = (a - mu, b - mv);
                sxy += da * db;
                sxx += da * da;
                syy += db * db;
            }
            if sxx == 0.0 || syy == 0.0 {
                return Err(Error::Undefined("pearson correlation of a constant vector".into()));
            }
            Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
        }
    }
}

/// Indices of the `k` largest entries; equal values are ordered by
/// ascending index.
pub fn top_k(row: ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Majority vote; an even split goes to the negative class.
pub fn majority_vote(neighbors: &[usize], labels: &[Label]) -> Prediction {
    let pos = neighbors.iter().filter(|&&j| labels[j].is_positive()).count();
    let neg = neighbors.len() - pos;
    let label = if pos > neg {
        Label::Positive
    } else {
        Label::Negative
    };
    Prediction {
        label,
        decision_value: Some((pos as f64 - neg as f64) / neighbors.len() as f64),
    }
}

fn check_k(k: usize, n_train: usize) -> Result<()> {
    if k < 1 || k > n_train {
        return Err(invalid(format!("k = {k} outside [1, {n_train}]")));
    }
    Ok(())
}

fn predict_rows(sims: ArrayView2<'_, f64>, labels: &[Label], k: usize) -> Vec<Prediction> {
    (0..sims.nrows())
        .into_par_iter()
        .map(|i| majority_vote(&top_k(sims.row(i), k), labels))
        .collect()
}

/// kNN on kernel rows: neighbours are the training samples with the
/// largest similarity to each test sample.
pub fn knn_predict_input(k_te: &KernelMatrix, train_labels: &[Label], k: usize) -> Result<Vec<Prediction>> {
    if k_te.ncols() != train_labels.len() {
        return Err(invalid(format!(
            "kernel has {} training columns, {} labels given",
            k_te.ncols(),
            train_labels.len()
        )));
    }
    check_k(k, train_labels.len())?;
    Ok(predict_rows(k_te.values().view(), train_labels, k))
}

/// Similarities between every row of `a` and every row of `b`.
pub fn similarity_table(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    kind: VectorSimilarity,
) -> Result<ndarray::Array2<f64>> {
    let flat = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            (0..b.nrows())
                .map(|j| vector_similarity(a.row(i), b.row(j), kind))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ndarray::Array2::from_shape_vec(
        (a.nrows(), b.nrows()),
        flat.into_iter().flatten().collect(),
    )
    .expect("shape"))
}

/// kNN in the embedding space: each sample is its row of similarities to
/// the training set, compared with `kind`.
pub fn knn_predict_embedding(
    k_tr: &KernelMatrix,
    k_te: &KernelMatrix,
    train_labels: &[Label],
    k: usize,
    kind: VectorSimilarity,
) -> Result<Vec<Prediction>> {
    if k_tr.nrows() != train_labels.len() || k_tr.ncols() != k_te.ncols() {
        return Err(invalid(format!(
            "embedding shapes disagree: K_tr {:?}, K_te {:?}, {} labels",
            k_tr.values().dim(),
            k_te.values().dim(),
            train_labels.len()
        )));
    }
    check_k(k, train_labels.len())?;
    let sims = similarity_table(k_te.values().view(), k_tr.values().view(), kind)?;
    Ok(predict_rows(sims.view(), train_labels, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_matrix::KernelMethod;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;

    fn ids(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    fn kte(values: Array2<f64>) -> KernelMatrix {
        let (r, c) = values.dim();
        KernelMatrix::new(values, ids(r, "t"), ids(c, "s"), KernelMethod::Tck).unwrap()
    }

    use Label::{Negative as N, Positive as P};

    #[test]
    fn vote_examples() {
        let k = kte(array![[0.1, 0.9, 0.3]]);
        assert_eq!(knn_predict_input(&k, &[N, P, N], 1).unwrap()[0].label, P);

        let k = kte(array![[0.8, 0.9, 0.1]]);
        let pred = knn_predict_input(&k, &[N, P, P], 2).unwrap();
        assert_eq!(pred[0].label, N);
        assert_eq!(pred[0].decision_value, Some(0.0));

        let k = kte(array![[0.8, 0.9, 0.7, 0.1]]);
        assert_eq!(knn_predict_input(&k, &[P, P, N, N], 3).unwrap()[0].label, P);
    }

    #[test]
    fn equal_values_prefer_lower_index() {
        let row = array![0.5, 0.7, 0.5, 0.5];
        assert_eq!(top_k(row.view(), 3), vec![1, 0, 2]);
    }

    #[test]
    fn k_out_of_range() {
        let k = kte(array![[0.1, 0.2]]);
        assert!(knn_predict_input(&k, &[N, P], 0).is_err());
        assert!(knn_predict_input(&k, &[N, P], 3).is_err());
        assert!(knn_predict_input(&k, &[N], 1).is_err());
    }

    #[test]
    fn similarity_examples() {
        let u = array![1.0, 2.0, 3.0];
        for kind in VectorSimilarity::ALL {
            let s = vector_similarity(u.view(), u.view(), kind).unwrap();
            let expected = match kind {
                VectorSimilarity::Euclidean | VectorSimilarity::Cityblock => 0.0,
                _ => 1.0,
            };
            assert!((s - expected).abs() < 1e-15, "{kind}");
        }
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        assert_eq!(vector_similarity(a.view(), b.view(), VectorSimilarity::Cosine).unwrap(), 0.0);
        assert_eq!(vector_similarity(a.view(), b.view(), VectorSimilarity::Cityblock).unwrap(), -2.0);
        let z = array![0.0, 0.0, 0.0];
        assert!(vector_similarity(z.view(), u.view(), VectorSimilarity::Cosine).is_err());
        let c = array![2.0, 2.0, 2.0];
        assert!(vector_similarity(c.view(), u.view(), VectorSimilarity::Pearson).is_err());
        assert!(vector_similarity(a.view(), u.view(), VectorSimilarity::Euclidean).is_err());
    }

    #[test]
    fn parse_names() {
        for kind in VectorSimilarity::ALL {
            assert_eq!(kind.to_string().parse::<VectorSimilarity>().unwrap(), kind);
        }
        assert!("manhattan".parse::<VectorSimilarity>().is_err());
    }

    /// Plain nearest neighbour by Euclidean distance on the embedding rows.
    fn brute_force_1nn(train: &Array2<f64>, test: &Array2<f64>) -> Vec<usize> {
        (0..test.nrows())
            .map(|i| {
                let mut best = (f64::INFINITY, 0);
                for j in 0..train.nrows() {
                    let d: f64 = (&test.row(i) - &train.row(j)).mapv(|x| x * x).sum();
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                best.1
            })
            .collect()
    }

    proptest! {
        #[test]
        fn rank_based_prediction(vals in proptest::collection::vec(0.0f64..1.0, 12), k in 1usize..6) {
            let labels = [P, N, P, N, N, P];
            let a = kte(Array2::from_shape_vec((2, 6), vals.clone()).unwrap());
            let b = kte(Array2::from_shape_vec((2, 6), vals.iter().map(|x| (3.0 * x).exp() - 7.0).collect()).unwrap());
            prop_assert_eq!(
                knn_predict_input(&a, &labels, k).unwrap(),
                knn_predict_input(&b, &labels, k).unwrap()
            );
        }

        #[test]
        fn embedding_euclidean_matches_brute_force(
            tr in proptest::collection::vec(0.0f64..1.0, 64),
            te in proptest::collection::vec(0.0f64..1.0, 32),
        ) {
            let train = Array2::from_shape_vec((8, 8), tr).unwrap();
            let test = Array2::from_shape_vec((4, 8), te).unwrap();
            let labels: Vec<Label> = (0..8).map(|i| if i < 4 { P } else { N }).collect();
            let k_tr = KernelMatrix::new(train.clone(), ids(8, "s"), ids(8, "s"), KernelMethod::Lps).unwrap();
            let k_te = kte(test.clone());
            let pred = knn_predict_embedding(&k_tr, &k_te, &labels, 1, VectorSimilarity::Euclidean).unwrap();
            let nn = brute_force_1nn(&train, &test);
            for (p, j) in pred.iter().zip(nn) {
                prop_assert_eq!(p.label, labels[j]);
            }
        }

        #[test]
        fn test_order_does_not_change_predictions(vals in proptest::collection::vec(0.0f64..1.0, 30), k in 1usize..7) {
            let labels = [P, N, P, N, N, P];
            let m = Array2::from_shape_vec((5, 6), vals).unwrap();
            let fwd = knn_predict_input(&kte(m.clone()), &labels, k).unwrap();
            let rev_rows: Vec<Array1<f64>> = (0..5).rev().map(|i| m.row(i).to_owned()).collect();
            let rev = Array2::from_shape_fn((5, 6), |(i, j)| rev_rows[i][j]);
            let back = knn_predict_input(&kte(rev), &labels, k).unwrap();
            for i in 0..5 {
                prop_assert_eq!(&fwd[i], &back[4 - i]);
            }
        }
    }
}
