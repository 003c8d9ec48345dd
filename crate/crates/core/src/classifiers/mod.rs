//! Classification from kernel matrices, either directly in the input space
//! (kernel rows as similarities, or as a precomputed SVM kernel) or in the
//! embedding space where each sample is its row of similarities to the
//! training set.

mod knn;
mod spectral;
mod svm;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use knn::{
    knn_predict_embedding, knn_predict_input, majority_vote, similarity_table, top_k,
    vector_similarity, VectorSimilarity,
};
pub use spectral::{eigenvalue_range, is_psd, repair_indefinite_kernel, RepairReport, PSD_TOLERANCE};
pub use svm::{
    decision_values, dual_objective, label_of, labels_pm, smo_solve, svm_fit_precomputed,
    svm_fit_with, svm_predict, SmoParams, SmoSolution, SvmModel,
};

use crate::error::{invalid, Error, Result};
use crate::kernel_matrix::{KernelMatrix, KernelMethod};
use crate::mts::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Input,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// SVM decision value, or `(votes_pos - votes_neg) / k` for kNN.
    pub decision_value: Option<f64>,
}

/// Rows of a kernel matrix as embedding vectors.
pub fn embed_rows(k: &KernelMatrix) -> Array2<f64> {
    k.values().clone()
}

/// Gaussian kernel `exp(-gamma * |a_i - b_j|^2)` between row sets.
pub fn rbf_gram(rows_a: ArrayView2<'_, f64>, rows_b: ArrayView2<'_, f64>, gamma: f64) -> Result<Array2<f64>> {
    if !(gamma > 0.0) {
        return Err(invalid(format!("gamma = {gamma} must be positive")));
    }
    if rows_a.ncols() != rows_b.ncols() {
        return Err(invalid(format!(
            "row dimensions {} and {} differ",
            rows_a.ncols(),
            rows_b.ncols()
        )));
    }
    Ok(Array2::from_shape_fn((rows_a.nrows(), rows_b.nrows()), |(i, j)| {
        let d2: f64 = rows_a
            .row(i)
            .iter()
            .zip(rows_b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        (-gamma * d2).exp()
    }))
}

/// The four classifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "knn-i")]
    KnnInput,
    #[serde(rename = "knn-e")]
    KnnEmbedding,
    #[serde(rename = "svm-i")]
    SvmInput,
    #[serde(rename = "svm-e")]
    SvmEmbedding,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::KnnInput,
        ClassifierKind::KnnEmbedding,
        ClassifierKind::SvmInput,
        ClassifierKind::SvmEmbedding,
    ];
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::KnnInput => "knn-i",
            ClassifierKind::KnnEmbedding => "knn-e",
            ClassifierKind::SvmInput => "svm-i",
            ClassifierKind::SvmEmbedding => "svm-e",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown classifier `{s}`")))
    }
}

/// A classifier with all hyperparameters fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassifierConfig {
    KnnInput { k: usize },
    KnnEmbedding { k: usize, similarity: VectorSimilarity },
    SvmInput { c_margin: f64 },
    SvmEmbedding { c_margin: f64, gamma: f64 },
}

impl ClassifierConfig {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierConfig::KnnInput { .. } => ClassifierKind::KnnInput,
            ClassifierConfig::KnnEmbedding { .. } => ClassifierKind::KnnEmbedding,
            ClassifierConfig::SvmInput { .. } => ClassifierKind::SvmInput,
            ClassifierConfig::SvmEmbedding { .. } => ClassifierKind::SvmEmbedding,
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            ClassifierConfig::KnnInput { k } | ClassifierConfig::KnnEmbedding { k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn similarity(&self) -> Option<VectorSimilarity> {
        match self {
            ClassifierConfig::KnnEmbedding { similarity, .. } => Some(*similarity),
            _ => None,
        }
    }

    pub fn c_margin(&self) -> Option<f64> {
        match self {
            ClassifierConfig::SvmInput { c_margin } | ClassifierConfig::SvmEmbedding { c_margin, .. } => {
                Some(*c_margin)
            }
            _ => None,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            ClassifierConfig::SvmEmbedding { gamma, .. } => Some(*gamma),
            _ => None,
        }
    }

    /// `key=value` lines, readable back by [`ClassifierConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("classifier".to_string(), self.kind().to_string())];
        if let Some(k) = self.k() {
            out.push(("k".into(), k.to_string()));
        }
        if let Some(s) = self.similarity() {
            out.push(("vector-sim".into(), s.to_string()));
        }
        if let Some(c) = self.c_margin() {
            out.push(("C-margin".into(), c.to_string()));
        }
        if let Some(g) = self.gamma() {
            out.push(("gamma".into(), g.to_string()));
        }
        out
    }

    pub fn from_parts(
        kind: ClassifierKind,
        k: Option<usize>,
        similarity: Option<VectorSimilarity>,
        c_margin: Option<f64>,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let need = |name: &str| invalid(format!("classifier {kind} requires {name}"));
        Ok(match kind {
            ClassifierKind::KnnInput => ClassifierConfig::KnnInput {
                k: k.ok_or_else(|| need("k"))?,
            },
            ClassifierKind::KnnEmbedding => ClassifierConfig::KnnEmbedding {
                k: k.ok_or_else(|| need("k"))?,
                similarity: similarity.ok_or_else(|| need("a vector similarity"))?,
            },
            ClassifierKind::SvmInput => ClassifierConfig::SvmInput {
                c_margin: c_margin.ok_or_else(|| need("C"))?,
            },
            ClassifierKind::SvmEmbedding => ClassifierConfig::SvmEmbedding {
                c_margin: c_margin.ok_or_else(|| need("C"))?,
                gamma: gamma.ok_or_else(|| need("gamma"))?,
            },
        })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut kind = None;
        let (mut k, mut sim, mut c, mut g) = (None, None, None, None);
        let num = |key: &str, v: &str| {
            v.parse::<f64>()
                .map_err(|_| invalid(format!("`{key}` is not a number: `{v}`")))
        };
        for (key, value) in pairs {
            match key {
                "classifier" => kind = Some(value.parse::<ClassifierKind>()?),
                "k" => {
                    k = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| invalid(format!("`k` is not an integer: `{value}`")))?,
                    )
                }
                "vector-sim" => sim = Some(value.parse::<VectorSimilarity>()?),
                "C-margin" => c = Some(num(key, value)?),
                "gamma" => g = Some(num(key, value)?),
                _ => {}
            }
        }
        let kind = kind.ok_or_else(|| invalid("missing `classifier`"))?;
        ClassifierConfig::from_parts(kind, k, sim, c, g)
    }
}

impl fmt::Display for ClassifierConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// What to do with an indefinite training kernel before SVM training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IndefinitePolicy {
    #[default]
    Clip,
    PassThrough,
}

/// RBF kernels over embedding rows: `(train x train, test x train)`.
pub fn embedding_rbf(
    k_tr: &KernelMatrix,
    k_te: &KernelMatrix,
    gamma: f64,
) -> Result<(KernelMatrix, KernelMatrix)> {
    let e_tr = embed_rows(k_tr);
    let e_te = embed_rows(k_te);
    let g_tr = rbf_gram(e_tr.view(), e_tr.view(), gamma)?;
    let g_te = rbf_gram(e_te.view(), e_tr.view(), gamma)?;
    Ok((
        KernelMatrix::new(g_tr, k_tr.row_ids().to_vec(), k_tr.row_ids().to_vec(), KernelMethod::Rbf)?,
        KernelMatrix::new(g_te, k_te.row_ids().to_vec(), k_tr.row_ids().to_vec(), KernelMethod::Rbf)?,
    ))
}

/// Trains `config` on `k_tr` and predicts the rows of `k_te`.
pub fn fit_predict(
    k_tr: &KernelMatrix,
    train_labels: &[Label],
    k_te: &KernelMatrix,
    config: &ClassifierConfig,
    policy: IndefinitePolicy,
) -> Result<Vec<Prediction>> {
    if k_tr.nrows() != train_labels.len() || k_tr.ncols() != k_te.ncols() {
        return Err(invalid(format!(
            "K_tr {:?}, K_te {:?} and {} labels do not align",
            k_tr.values().dim(),
            k_te.values().dim(),
            train_labels.len()
        )));
    }
    match *config {
        ClassifierConfig::KnnInput { k } => knn_predict_input(k_te, train_labels, k),
        ClassifierConfig::KnnEmbedding { k, similarity } => {
            knn_predict_embedding(k_tr, k_te, train_labels, k, similarity)
        }
        ClassifierConfig::SvmInput { c_margin } => {
            let (tr, te) = match policy {
                IndefinitePolicy::Clip => {
                    let (tr, te, _) = repair_indefinite_kernel(k_tr, Some(k_te))?;
                    (tr, te.expect("test kernel"))
                }
                IndefinitePolicy::PassThrough => (k_tr.clone(), k_te.clone()),
            };
            let model = svm_fit_precomputed(&tr, train_labels, c_margin)?;
            svm_predict(&model, &te)
        }
        ClassifierConfig::SvmEmbedding { c_margin, gamma } => {
            let (g_tr, g_te) = embedding_rbf(k_tr, k_te, gamma)?;
            let mut model = svm_fit_precomputed(&g_tr, train_labels, c_margin)?;
            model.gamma = Some(gamma);
            model.space = Space::Embedding;
            svm_predict(&model, &g_te)
        }
    }
}
