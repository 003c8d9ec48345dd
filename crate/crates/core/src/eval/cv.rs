//! Stratified k-fold grid search over classifier hyperparameters.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{
    embedding_rbf, fit_predict, repair_indefinite_kernel, similarity_table, svm_fit_precomputed,
    svm_predict, top_k, majority_vote, ClassifierConfig, ClassifierKind, IndefinitePolicy,
    VectorSimilarity,
};
use crate::error::{invalid, Result};
use crate::kernel_matrix::KernelMatrix;
use crate::mts::Label;
use crate::seed::rng_for;

/// Scores closer than this are ties, resolved by grid order.
const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub knn_k_grid: Vec<usize>,
    pub svm_c_grid: Vec<f64>,
    pub svm_gamma_grid: Vec<f64>,
    pub similarity_grid: Vec<VectorSimilarity>,
    pub seed: u64,
}

/// `2^e` for `e = from, from + step, ..., to`.
pub fn log2_grid(from: i32, to: i32, step: i32) -> Vec<f64> {
    (0..)
        .map(|i| from + i * step)
        .take_while(|&e| e <= to)
        .map(|e| 2f64.powi(e))
        .collect()
}

impl CvPlan {
    /// Five folds, `k` in `1..=49`, 16 values of `C` in `[2^-20, 2^10]` and
    /// 11 values of `gamma` in `[2^-5, 2^5]`, all four vector similarities.
    pub fn new(seed: u64) -> Self {
        CvPlan {
            folds: 5,
            knn_k_grid: (1..=49).collect(),
            svm_c_grid: log2_grid(-20, 10, 2),
            svm_gamma_grid: log2_grid(-5, 5, 1),
            similarity_grid: VectorSimilarity::ALL.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(invalid("at least 2 folds are required"));
        }
        if self.knn_k_grid.is_empty()
            || self.svm_c_grid.is_empty()
            || self.svm_gamma_grid.is_empty()
            || self.similarity_grid.is_empty()
        {
            return Err(invalid("hyperparameter grids must be non-empty"));
        }
        if self.knn_k_grid.contains(&0) {
            return Err(invalid("k must be at least 1"));
        }
        if self.svm_c_grid.iter().chain(&self.svm_gamma_grid).any(|&x| !(x > 0.0)) {
            return Err(invalid("C and gamma grids must be positive"));
        }
        Ok(())
    }

    /// Candidate configurations of `kind`, in tie-break order.
    pub fn candidates(&self, kind: ClassifierKind) -> Vec<ClassifierConfig> {
        let mut ks = self.knn_k_grid.clone();
        ks.sort_unstable();
        ks.dedup();
        let mut cs = self.svm_c_grid.clone();
        cs.sort_by(f64::total_cmp);
        let mut gs = self.svm_gamma_grid.clone();
        gs.sort_by(f64::total_cmp);
        match kind {
            ClassifierKind::KnnInput => ks.iter().map(|&k| ClassifierConfig::KnnInput { k }).collect(),
            ClassifierKind::KnnEmbedding => ks
                .iter()
                .flat_map(|&k| {
                    self.similarity_grid
                        .iter()
                        .map(move |&similarity| ClassifierConfig::KnnEmbedding { k, similarity })
                })
                .collect(),
            ClassifierKind::SvmInput => cs
                .iter()
                .map(|&c_margin| ClassifierConfig::SvmInput { c_margin })
                .collect(),
            ClassifierKind::SvmEmbedding => cs
                .iter()
                .flat_map(|&c_margin| {
                    gs.iter()
                        .map(move |&gamma| ClassifierConfig::SvmEmbedding { c_margin, gamma })
                })
                .collect(),
        }
    }
}

/// Fold index of every sample. Each class is shuffled with the seed and
/// dealt round-robin, so per-fold class counts differ by at most one.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(invalid("at least 2 folds are required"));
    }
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for (ci, class) in [Label::Negative, Label::Positive].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(invalid(format!(
                "class {class:?} has {} members, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng_for(seed, "cv-folds", &[ci as u64]));
        for (r, &i) in members.iter().enumerate() {
            assignment[i] = (offset + r) % folds;
        }
        // Continue dealing where the previous class stopped to balance sizes.
        offset = (offset + members.len()) % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub config: ClassifierConfig,
    /// Mean validation accuracy, `None` when the configuration could not
    /// be evaluated on every fold.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: ClassifierConfig,
    pub score: f64,
    pub folds: Vec<usize>,
    pub grid: Vec<GridScore>,
}

fn accuracy(pred: impl Iterator<Item = Label>, truth: &[Label]) -> f64 {
    let correct = pred.zip(truth).filter(|(p, t)| p == *t).count();
    correct as f64 / truth.len() as f64
}

/// Validation accuracy of every candidate on one fold.
fn fold_scores(
    k_tr: &KernelMatrix,
    labels: &[Label],
    train_idx: &[usize],
    val_idx: &[usize],
    candidates: &[ClassifierConfig],
    policy: IndefinitePolicy,
) -> Vec<Option<f64>> {
    let kin = k_tr.submatrix(train_idx, train_idx);
    let kval = k_tr.submatrix(val_idx, train_idx);
    let y_tr: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
    let y_val: Vec<Label> = val_idx.iter().map(|&i| labels[i]).collect();
    let n_tr = train_idx.len();

    let knn_scores = |sims: &Array2<f64>, ks: &mut dyn Iterator<Item = usize>| -> Vec<Option<f64>> {
        let max_k = n_tr;
        let ranked: Vec<Vec<usize>> = (0..sims.nrows()).map(|i| top_k(sims.row(i), max_k)).collect();
        ks.map(|k| {
            (k <= n_tr).then(|| {
                accuracy(ranked.iter().map(|r| majority_vote(&r[..k], &y_tr).label), &y_val)
            })
        })
        .collect()
    };

    match candidates.first().map(ClassifierConfig::kind) {
        None => vec![],
        Some(ClassifierKind::KnnInput) => {
            knn_scores(kval.values(), &mut candidates.iter().map(|c| c.k().unwrap()))
        }
        Some(ClassifierKind::KnnEmbedding) => {
            let mut tables = Vec::new();
            let mut out = vec![None; candidates.len()];
            let mut sims: Vec<VectorSimilarity> = Vec::new();
            for s in candidates.iter().filter_map(|c| c.similarity()) {
                if !sims.contains(&s) {
                    sims.push(s);
                }
            }
            for sim in sims {
                tables.push((sim, similarity_table(kval.values().view(), kin.values().view(), sim).ok()));
            }
            for (sim, table) in tables {
                let Some(table) = table else {
                    log::warn!("vector similarity {sim} undefined on a fold; skipped");
                    continue;
                };
                let idx: Vec<usize> = (0..candidates.len())
                    .filter(|&i| candidates[i].similarity() == Some(sim))
                    .collect();
                let scores = knn_scores(&table, &mut idx.iter().map(|&i| candidates[i].k().unwrap()));
                for (i, s) in idx.into_iter().zip(scores) {
                    out[i] = s;
                }
            }
            out
        }
        Some(ClassifierKind::SvmInput) => {
            let (tr, te) = match policy {
                IndefinitePolicy::Clip => match repair_indefinite_kernel(&kin, Some(&kval)) {
                    Ok((tr, te, _)) => (tr, te.expect("validation kernel")),
                    Err(_) => return vec![None; candidates.len()],
                },
                IndefinitePolicy::PassThrough => (kin, kval),
            };
            candidates
                .iter()
                .map(|c| {
                    let model = svm_fit_precomputed(&tr, &y_tr, c.c_margin()?).ok()?;
                    let pred = svm_predict(&model, &te).ok()?;
                    Some(accuracy(pred.iter().map(|p| p.label), &y_val))
                })
                .collect()
        }
        Some(ClassifierKind::SvmEmbedding) => {
            let mut out = vec![None; candidates.len()];
            let mut gammas: Vec<f64> = Vec::new();
            for g in candidates.iter().filter_map(|c| c.gamma()) {
                if !gammas.contains(&g) {
                    gammas.push(g);
                }
            }
            for g in gammas {
                let Ok((g_tr, g_val)) = embedding_rbf(&kin, &kval, g) else {
                    continue;
                };
                for (i, c) in candidates.iter().enumerate() {
                    if c.gamma() != Some(g) {
                        continue;
                    }
                    out[i] = svm_fit_precomputed(&g_tr, &y_tr, c.c_margin().unwrap())
                        .and_then(|m| svm_predict(&m, &g_val))
                        .ok()
                        .map(|pred| accuracy(pred.iter().map(|p| p.label), &y_val));
                }
            }
            out
        }
    }
}

/// Grid search with stratified folds; the best mean validation accuracy
/// wins and ties go to the earliest candidate in grid order.
pub fn cross_validate(
    k_tr: &KernelMatrix,
    labels: &[Label],
    plan: &CvPlan,
    kind: ClassifierKind,
    policy: IndefinitePolicy,
) -> Result<CvOutcome> {
    plan.validate()?;
    if !k_tr.is_symmetric() || k_tr.nrows() != labels.len() {
        return Err(invalid("cross-validation needs a symmetric K_tr aligned with the labels"));
    }
    let folds = stratified_folds(labels, plan.folds, plan.seed)?;
    let candidates = plan.candidates(kind);

    let per_fold: Vec<Vec<Option<f64>>> = (0..plan.folds)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != f).collect();
            let val_idx: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
            fold_scores(k_tr, labels, &train_idx, &val_idx, &candidates, policy)
        })
        .collect();

    let grid: Vec<GridScore> = candidates
        .iter()
        .enumerate()
        .map(|(i, config)| {
            let scores: Option<Vec<f64>> = per_fold.iter().map(|f| f[i]).collect();
            GridScore {
                config: *config,
                score: scores.map(|s| s.iter().sum::<f64>() / s.len() as f64),
            }
        })
        .collect();

    let mut best: Option<(f64, ClassifierConfig)> = None;
    for g in &grid {
        if let Some(s) = g.score {
            if best.map_or(true, |(b, _)| s > b + SCORE_EPS) {
                best = Some((s, g.config));
            }
        }
    }
    let (score, best) = best.ok_or_else(|| invalid("no grid point could be evaluated"))?;
    Ok(CvOutcome {
        best,
        score,
        folds,
        grid,
    })
}

/// Validation accuracy of one configuration by direct refits, without the
/// shared per-fold caches of [`cross_validate`].
pub fn fold_accuracy_direct(
    k_tr: &KernelMatrix,
    labels: &[Label],
    folds: &[usize],
    n_folds: usize,
    config: &ClassifierConfig,
    policy: IndefinitePolicy,
) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..n_folds {
        let tr: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != f).collect();
        let va: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
        let y_tr: Vec<Label> = tr.iter().map(|&i| labels[i]).collect();
        let y_va: Vec<Label> = va.iter().map(|&i| labels[i]).collect();
        let pred = fit_predict(
            &k_tr.submatrix(&tr, &tr),
            &y_tr,
            &k_tr.submatrix(&va, &tr),
            config,
            policy,
        )?;
        total += accuracy(pred.iter().map(|p| p.label), &y_va);
    }
    Ok(total / n_folds as f64)
}
